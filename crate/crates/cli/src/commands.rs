use std::path::{Path, PathBuf};

use promptforge::affine::AffineRanges;
use promptforge::augment::CorruptionKind;
use promptforge::color::MaskMode;
use promptforge::data::{load_idx, shapes_task, split, Dataset, ShiftConfig, SplitTag, TaskConfig};
use promptforge::eval::{bench_timing, corruption_eval, embedding_check, evaluate};
use promptforge::model::{pretrain, FrozenModel, ModelWeights, PretrainConfig};
use promptforge::pipeline::{Prompt, PromptInit, Variant};
use promptforge::ppm::{decode_ppm, encode_ppm, mask_image};
use promptforge::rng::RngStream;
use promptforge::tensorfile::tensorfile_read;
use promptforge::trainer::{train_prompt, Augment, TrainConfig};

use crate::config::{settings, ConfigMap};
use crate::error::{at, CliError};
use crate::manifest::Manifest;

type Res<T = ()> = Result<T, CliError>;

fn get<T: Clone>(v: &Option<T>) -> T {
    v.clone().expect("resolved setting")
}

#[derive(clap::Args, Debug, Clone, Default)]
pub struct Common {
    /// Flat key=value config file; flags take precedence over its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run seed (falls back to PROMPTFORGE_SEED, then 0)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default runs/<command>-seed<seed>)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for per-sample parallelism
    #[arg(long)]
    pub workers: Option<usize>,
}

settings! {
    /// Dataset settings: the synthetic shapes task or IDX files.
    TaskArgs {
        height: usize = Some(64),
        width: usize = Some(64),
        num_classes: usize = Some(4),
        source_train: usize = Some(2000),
        source_val: usize = Some(200),
        target_train: usize = Some(2000),
        target_val: usize = Some(200),
        target_test: usize = Some(500),
        /// Target-domain hue rotation in degrees
        hue: f32 = Some(ShiftConfig::default().hue_degrees),
        /// Target-domain translation in pixels (use --translate-y=-2 for negatives)
        translate_x: i32 = Some(ShiftConfig::default().translate.0),
        translate_y: i32 = Some(ShiftConfig::default().translate.1),
        /// Target-domain black-level lift
        background_delta: f32 = Some(ShiftConfig::default().background_delta),
        noise_std: f32 = Some(ShiftConfig::default().noise_std),
        /// IDX image file used instead of the synthetic target domain
        idx_images: PathBuf = None,
        idx_labels: PathBuf = None,
    }
}

settings! {
    PromptArgs {
        variant: Variant = Some(Variant::Acavp),
        r_sigma: f32 = Some(PromptInit::default().r_sigma),
        r_t: f32 = Some(AffineRanges::default().r_t),
        r_theta: f32 = Some(AffineRanges::default().r_theta),
        r_sh: f32 = Some(AffineRanges::default().r_sh),
        mask_mode: MaskMode = Some(MaskMode::Geometric),
        /// VP border width in pixels (default scales 28 px at 224)
        pad: usize = None,
        evp_scale: f32 = Some(PromptInit::default().evp_scale),
    }
}

settings! {
    TrainArgs {
        lr0: f32 = Some(TrainConfig::default().lr0),
        epochs: usize = Some(TrainConfig::default().epochs),
        momentum: f32 = Some(TrainConfig::default().momentum),
        batch_size: usize = Some(TrainConfig::default().batch_size),
        clip_value: f32 = Some(TrainConfig::default().clip_value),
        grad_normalize: bool = Some(TrainConfig::default().grad_normalize),
        weight_decay: f32 = Some(0.0),
        mse_reg_weight: f32 = Some(0.0),
        augment: Augment = Some(Augment::None),
        dropout: f32 = Some(0.0),
        /// Frozen model file; when absent one is pretrained on the source domain
        model: PathBuf = None,
        pretrain_epochs: usize = Some(PretrainConfig::default().max_epochs),
    }
}

settings! {
    PretrainArgs {
        pretrain_epochs: usize = Some(PretrainConfig::default().max_epochs),
    }
}

settings! {
    EvalArgs {
        model: PathBuf = None,
        /// Prompt file; omitted means the unprompted model
        prompt: PathBuf = None,
        split: SplitTag = Some(SplitTag::Test),
        /// Comma-separated corruption kinds, or `all`
        kinds: String = Some("all".into()),
    }
}

settings! {
    BenchArgs {
        /// Model file; random weights are used when absent
        model: PathBuf = None,
        /// Trained prompt to time in place of a fresh one of its variant
        prompt: PathBuf = None,
        size: usize = Some(224),
        batch: usize = Some(32),
        reps: usize = Some(20),
    }
}

settings! {
    VisualizeArgs {
        /// Prompt file; a fresh full-chain prompt when absent
        prompt: PathBuf = None,
        /// PPM input image; otherwise a target-domain test image
        input: PathBuf = None,
        index: usize = Some(0),
    }
}

settings! {
    EmbedArgs {
        images: usize = Some(20),
        configs: usize = Some(5),
        size: usize = Some(64),
        /// Offset added to the embedded translation (negative control)
        perturb: f32 = Some(0.0),
    }
}

/// Resolved seed, config and output location shared by every command.
pub struct Run {
    pub seed: u64,
    pub out: PathBuf,
    pub manifest: Manifest,
}

impl Run {
    fn open(command: &str, common: &Common, cfg: &mut ConfigMap) -> Res<Run> {
        let mut manifest = Manifest::new(command);
        let seed = match common.seed {
            Some(s) => s,
            None => match cfg.take::<u64>("seed")? {
                Some(s) => s,
                None => match std::env::var("PROMPTFORGE_SEED") {
                    Ok(v) => v
                        .trim()
                        .parse()
                        .map_err(|_| CliError::Usage(format!("PROMPTFORGE_SEED is not an integer: `{v}`")))?,
                    Err(_) => 0,
                },
            },
        };
        if let Some(path) = &common.config {
            manifest.input(path)?;
        }
        if let Some(n) = common.workers {
            if n == 0 {
                return Err(CliError::Usage("workers must be at least 1".into()));
            }
            // the pool can only be configured once per process
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        manifest.settings.push(("seed".into(), seed.to_string()));
        let out = common
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(format!("{command}-seed{seed}")));
        Ok(Run { seed, out, manifest })
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Res {
        std::fs::create_dir_all(&self.out)
            .and_then(|_| std::fs::write(self.out.join(name), bytes))
            .map_err(|e| CliError::Runtime {
                stage: "write outputs",
                source: promptforge::Error::Io {
                    path: self.out.join(name),
                    source: e,
                },
            })
    }

    fn finish(&self) -> Res {
        self.write("manifest.txt", self.manifest.render().as_bytes())?;
        println!("outputs in {}", self.out.display());
        Ok(())
    }
}

fn load_config(common: &Common) -> Res<ConfigMap> {
    match &common.config {
        Some(p) => ConfigMap::load(p),
        None => Ok(ConfigMap::default()),
    }
}

fn require(path: &Option<PathBuf>, what: &str) -> Res<PathBuf> {
    let p = path
        .clone()
        .ok_or_else(|| CliError::Usage(format!("--{what} is required")))?;
    if !p.is_file() {
        return Err(CliError::Usage(format!("{what} file {} does not exist", p.display())));
    }
    Ok(p)
}

fn load_model(path: &Path, run: &mut Run) -> Res<FrozenModel> {
    run.manifest.input(path)?;
    let entries = tensorfile_read(path).map_err(at("load model"))?;
    FrozenModel::from_entries(&entries).map_err(at("load model"))
}

fn load_prompt(path: &Path, run: &mut Run) -> Res<Prompt> {
    run.manifest.input(path)?;
    let entries = tensorfile_read(path).map_err(at("load prompt"))?;
    Prompt::from_entries(&entries).map_err(at("load prompt"))
}

impl TaskArgs {
    fn task_config(&self) -> TaskConfig {
        TaskConfig {
            height: get(&self.height),
            width: get(&self.width),
            num_classes: get(&self.num_classes),
            source_train: get(&self.source_train),
            source_val: get(&self.source_val),
            target_train: get(&self.target_train),
            target_val: get(&self.target_val),
            target_test: get(&self.target_test),
            shift: ShiftConfig {
                hue_degrees: get(&self.hue),
                translate: (get(&self.translate_x), get(&self.translate_y)),
                background_delta: get(&self.background_delta),
                noise_std: get(&self.noise_std),
                seed: 0,
            },
        }
    }

    /// Source and target datasets. With IDX files the target is the loaded
    /// data split 80/10/10 and there is no source domain.
    fn datasets(&self, run: &mut Run) -> Res<(Option<Dataset>, Dataset)> {
        match (&self.idx_images, &self.idx_labels) {
            (Some(i), Some(l)) => {
                run.manifest.input(i)?;
                run.manifest.input(l)?;
                let d = load_idx(i, l).map_err(at("load idx"))?;
                let d = split(&d, [0.8, 0.1, 0.1], RngStream::new(run.seed).derive("idx-split")).map_err(at("split idx"))?;
                Ok((None, d))
            }
            (None, None) => {
                let (s, t) = shapes_task(&self.task_config(), RngStream::new(run.seed)).map_err(at("generate data"))?;
                Ok((Some(s), t))
            }
            _ => Err(CliError::Usage("idx_images and idx_labels must be given together".into())),
        }
    }
}

fn pretrain_model(source: Option<&Dataset>, epochs: usize, run: &mut Run) -> Res<FrozenModel> {
    let source = source.ok_or_else(|| CliError::Usage("a model file is required when training on IDX data".into()))?;
    let cfg = PretrainConfig {
        max_epochs: epochs,
        ..Default::default()
    };
    let (model, report) = pretrain(source, &cfg, RngStream::new(run.seed).derive("pretrain")).map_err(at("pretrain"))?;
    println!(
        "pretrained {} epochs, source val accuracy {:.4}{}",
        report.epochs_run,
        report.val_accuracy,
        if report.converged { "" } else { " (did not reach the target accuracy)" }
    );
    let bytes = promptforge::tensorfile::encode(&model.to_entries()).map_err(at("save model"))?;
    run.write("model.tf", &bytes)?;
    Ok(model)
}

impl PromptArgs {
    fn init(&self) -> PromptInit {
        PromptInit {
            ranges: AffineRanges {
                r_t: get(&self.r_t),
                r_theta: get(&self.r_theta),
                r_sh: get(&self.r_sh),
            },
            r_sigma: get(&self.r_sigma),
            mask_mode: get(&self.mask_mode),
            pad: self.pad,
            evp_scale: get(&self.evp_scale),
        }
    }
}

pub fn pretrain_cmd(common: &Common, mut task: TaskArgs, mut args: PretrainArgs) -> Res {
    let mut cfg = load_config(common)?;
    let mut run = Run::open("pretrain", common, &mut cfg)?;
    task.resolve(&mut cfg)?;
    args.resolve(&mut cfg)?;
    cfg.finish()?;
    task.echo(&mut run.manifest.settings);
    args.echo(&mut run.manifest.settings);
    let (source, target) = task.datasets(&mut run)?;
    let model = pretrain_model(source.as_ref(), get(&args.pretrain_epochs), &mut run)?;
    let zero_shot = evaluate(&model, None, &target, SplitTag::Test).map_err(at("evaluate"))?;
    println!("zero-shot target test accuracy {:.4}", zero_shot.accuracy);
    run.finish()
}

pub fn train_cmd(common: &Common, mut task: TaskArgs, mut prompt: PromptArgs, mut train: TrainArgs) -> Res {
    let mut cfg = load_config(common)?;
    let mut run = Run::open("train", common, &mut cfg)?;
    task.resolve(&mut cfg)?;
    prompt.resolve(&mut cfg)?;
    train.resolve(&mut cfg)?;
    cfg.finish()?;
    let variant = get(&prompt.variant);
    task.echo(&mut run.manifest.settings);
    prompt.echo(&mut run.manifest.settings);
    train.echo(&mut run.manifest.settings);

    let tc = TrainConfig {
        lr0: get(&train.lr0),
        epochs: get(&train.epochs),
        momentum: get(&train.momentum),
        batch_size: get(&train.batch_size),
        clip_value: get(&train.clip_value),
        grad_normalize: get(&train.grad_normalize),
        weight_decay: get(&train.weight_decay),
        mse_reg_weight: get(&train.mse_reg_weight),
        augment: get(&train.augment),
        dropout: get(&train.dropout),
        seed: run.seed,
        init: prompt.init(),
    };
    tc.validate().map_err(at("validate config"))?;
    let (source, target) = task.datasets(&mut run)?;
    let model = match &train.model {
        Some(_) => load_model(&require(&train.model, "model")?, &mut run)?,
        None => pretrain_model(source.as_ref(), get(&train.pretrain_epochs), &mut run)?,
    };
    let out = train_prompt(&tc, &model, &target, variant).map_err(at("train"))?;

    let init = &out.log.rows[0];
    let p = Prompt::init(variant, target.images[0].height(), target.images[0].width(), &tc.init);
    println!("init {variant}: {} parameters, affine raw {:?}", p.num_params(), p.groups()[0]);
    println!("epoch 0 val accuracy {:.4}", init.val_acc);
    let test = evaluate(&model, Some(&out.best.prompt), &target, SplitTag::Test).map_err(at("evaluate"))?;
    println!(
        "best epoch {} val accuracy {:.4}, test accuracy {:.4}",
        out.best.epoch, out.best.val_accuracy, test.accuracy
    );
    run.write("metrics.csv", out.log.to_csv().as_bytes())?;
    let bytes = promptforge::tensorfile::encode(&out.best.prompt.to_entries()).map_err(at("save prompt"))?;
    run.write("prompt.tf", &bytes)?;
    run.finish()
}

fn parse_kinds(s: &str) -> Res<Vec<CorruptionKind>> {
    if s == "all" {
        return Ok(CorruptionKind::ALL.to_vec());
    }
    s.split(',')
        .filter(|k| !k.trim().is_empty())
        .map(|k| k.trim().parse().map_err(|e| CliError::Usage(format!("kinds: {e}"))))
        .collect()
}

fn eval_setup(command: &str, common: &Common, mut task: TaskArgs, mut args: EvalArgs) -> Res<(Run, FrozenModel, Option<Prompt>, Dataset, EvalArgs)> {
    let mut cfg = load_config(common)?;
    let mut run = Run::open(command, common, &mut cfg)?;
    task.resolve(&mut cfg)?;
    args.resolve(&mut cfg)?;
    cfg.finish()?;
    task.echo(&mut run.manifest.settings);
    args.echo(&mut run.manifest.settings);
    let model_path = require(&args.model, "model")?;
    let prompt_path = args.prompt.as_ref().map(|_| require(&args.prompt, "prompt")).transpose()?;
    let model = load_model(&model_path, &mut run)?;
    let prompt = prompt_path.map(|p| load_prompt(&p, &mut run)).transpose()?;
    let (_, target) = task.datasets(&mut run)?;
    Ok((run, model, prompt, target, args))
}

pub fn eval_cmd(common: &Common, task: TaskArgs, args: EvalArgs) -> Res {
    let (run, model, prompt, data, args) = eval_setup("eval", common, task, args)?;
    let report = evaluate(&model, prompt.as_ref(), &data, get(&args.split)).map_err(at("evaluate"))?;
    println!("{} accuracy {:.4} over {} images", get(&args.split), report.accuracy, report.n);
    run.write("eval.csv", report.to_csv().as_bytes())?;
    run.finish()
}

pub fn corrupt_cmd(common: &Common, task: TaskArgs, args: EvalArgs) -> Res {
    let (run, model, prompt, data, args) = eval_setup("corrupt", common, task, args)?;
    let kinds = parse_kinds(&get(&args.kinds))?;
    let rng = RngStream::new(run.seed).derive("corrupt");
    let report = corruption_eval(&model, prompt.as_ref(), &data, get(&args.split), &kinds, rng).map_err(at("corruption sweep"))?;
    for (k, row) in report.kinds.iter().zip(&report.accuracy) {
        let cells: Vec<String> = row.iter().map(|a| format!("{a:.3}")).collect();
        println!("{:<15} {}", k.name(), cells.join(" "));
    }
    println!("mean accuracy {:.4}", report.mean);
    run.write("corruption.csv", report.to_csv().as_bytes())?;
    run.finish()
}

pub fn bench_cmd(common: &Common, mut args: BenchArgs) -> Res {
    let mut cfg = load_config(common)?;
    let mut run = Run::open("bench", common, &mut cfg)?;
    args.resolve(&mut cfg)?;
    cfg.finish()?;
    args.echo(&mut run.manifest.settings);
    let model = match &args.model {
        Some(_) => load_model(&require(&args.model, "model")?, &mut run)?,
        None => FrozenModel::new(ModelWeights::random(4, RngStream::new(run.seed).derive("bench-model")))
            .map_err(at("build model"))?,
    };
    let prompts = match &args.prompt {
        Some(_) => vec![load_prompt(&require(&args.prompt, "prompt")?, &mut run)?],
        None => Vec::new(),
    };
    let size = get(&args.size);
    // timing is measured on one thread regardless of --workers
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    let report = pool
        .install(|| bench_timing(&prompts, &model, size, size, get(&args.batch), get(&args.reps), RngStream::new(run.seed)))
        .map_err(at("bench"))?;
    println!("batch {} of 3x{size}x{size}, {} reps, medians", report.batch, report.reps);
    for r in &report.rows {
        println!(
            "{:<7} prompt {:.3} ms/img  model {:.3} ms/img  relative {:.4}",
            r.variant.name(),
            1e3 * r.prompt_s / report.batch as f64,
            1e3 * r.model_s / report.batch as f64,
            r.relative
        );
    }
    run.write("timing.csv", report.to_csv().as_bytes())?;
    run.finish()
}

pub fn visualize_cmd(common: &Common, mut task: TaskArgs, mut prompt_args: PromptArgs, mut args: VisualizeArgs) -> Res {
    let mut cfg = load_config(common)?;
    let mut run = Run::open("visualize", common, &mut cfg)?;
    task.resolve(&mut cfg)?;
    prompt_args.resolve(&mut cfg)?;
    args.resolve(&mut cfg)?;
    cfg.finish()?;
    task.echo(&mut run.manifest.settings);
    prompt_args.echo(&mut run.manifest.settings);
    args.echo(&mut run.manifest.settings);

    let image = match &args.input {
        Some(_) => {
            let p = require(&args.input, "input")?;
            run.manifest.input(&p)?;
            let bytes = std::fs::read(&p).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?;
            decode_ppm(&bytes).map_err(at("decode input"))?
        }
        None => {
            let (_, target) = task.datasets(&mut run)?;
            let test = target.indices(SplitTag::Test);
            let i = get(&args.index);
            let &idx = test
                .get(i)
                .ok_or_else(|| CliError::Usage(format!("index {i} beyond the {} test images", test.len())))?;
            target.images[idx].clone()
        }
    };
    let prompt = match &args.prompt {
        Some(_) => load_prompt(&require(&args.prompt, "prompt")?, &mut run)?,
        None => Prompt::init(get(&prompt_args.variant), image.height(), image.width(), &prompt_args.init()),
    };
    if (prompt.height(), prompt.width()) != (image.height(), image.width()) {
        return Err(CliError::Usage(format!(
            "prompt is {}x{} but the image is {}x{}",
            prompt.height(),
            prompt.width(),
            image.height(),
            image.width()
        )));
    }
    let stages = prompt.stages(&image).map_err(at("apply prompt"))?;
    run.write("original.ppm", &encode_ppm(&image))?;
    run.write("affine.ppm", &encode_ppm(&stages.warped))?;
    run.write("mask.ppm", &encode_ppm(&mask_image(&stages.mask)))?;
    run.write("prompted.ppm", &encode_ppm(&stages.output))?;
    println!("mask fraction {:.4}", stages.mask.fraction());
    run.finish()
}

pub fn embed_check_cmd(common: &Common, mut args: EmbedArgs) -> Res {
    let mut cfg = load_config(common)?;
    let mut run = Run::open("embed-check", common, &mut cfg)?;
    args.resolve(&mut cfg)?;
    cfg.finish()?;
    args.echo(&mut run.manifest.settings);
    let r = embedding_check(
        get(&args.images),
        get(&args.configs),
        get(&args.size),
        RngStream::new(run.seed).derive("embed-check"),
        get(&args.perturb),
    )
    .map_err(at("embedding check"))?;
    println!("{} cases, max abs pixel deviation {:e}", r.cases, r.max_deviation);
    if r.max_deviation > 1e-5 {
        return Err(CliError::Check(format!(
            "deviation {:e} exceeds 1e-5 on image {} (seed {})",
            r.max_deviation, r.worst_image, run.seed
        )));
    }
    Ok(())
}
