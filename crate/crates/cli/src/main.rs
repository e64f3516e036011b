mod render;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use candle_core::{DType, Device, Tensor};
use clap::{Args, Parser, Subcommand};
use lgsan::checkpoint::{load_into, load_model};
use lgsan::data::{generate_synthetic, load_cod_dataset, load_split, read_binary_png, read_gray_png, save_dataset, Sample, SyntheticSpec};
use lgsan::nn::ParamStore;
use lgsan::train::{evaluate, Trainer};
use lgsan::{AblationFlags, Lgsan, LgsanError, Output, Result, RunConfig};
use lgsan_metrics::{evaluate_sample, MetricAccumulator, MetricReport, SampleMetrics};
use ndarray::Array2;
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "lgsan", version, about = "Train, evaluate and run the language-guided camouflage segmentation network")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Overrides {
    /// TOML run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Ablation flags, e.g. `c,e,sc` or `b` for the bare baseline.
    #[arg(long, global = true)]
    flags: Option<String>,
    /// Weight of the edge Dice term.
    #[arg(long, global = true)]
    lambda: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train and keep the checkpoint with the best validation S-measure.
    Train {
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
        /// Dataset directory (Imgs/, GT/); overrides `data.root`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        /// Print every n-th log row.
        #[arg(long, default_value_t = 10)]
        log_every: usize,
    },
    /// Score predictions: either two directories, or a checkpoint on a dataset.
    Eval {
        #[arg(long, requires = "gt", conflicts_with = "checkpoint")]
        pred: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset for checkpoint evaluation; the run's validation split when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Machine-readable report with per-sample rows.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Write the six output maps and their heatmap overlays for one image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Full prompt; defaults to the template filled with `--category`.
        #[arg(long)]
        prompt: Option<String>,
        #[arg(long, default_value = "object")]
        category: String,
        #[arg(long, default_value = "predictions")]
        out: PathBuf,
    },
    /// Train and evaluate the four ablation rows on one split.
    Ablate {
        #[arg(long, default_value = "runs/ablate")]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Write a synthetic dataset in the Imgs/ GT/ Edge/ layout.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        camo: Option<f64>,
    },
}

fn exit_code(e: &LgsanError) -> u8 {
    match e {
        LgsanError::Config(_) | LgsanError::Version(_) => 2,
        LgsanError::Data(_) => 3,
        LgsanError::Numeric(_) => 4,
        _ => 1,
    }
}

fn build_config(o: &Overrides) -> Result<RunConfig> {
    let mut cfg = match &o.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(f) = &o.flags {
        cfg.flags = f.parse()?;
    }
    if let Some(l) = o.lambda {
        cfg.lambda = l;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn provenance(cfg: &RunConfig) -> Vec<(String, String)> {
    vec![("config_hash".into(), cfg.hash()), ("seed".into(), cfg.seed.to_string())]
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value).expect("json serializes"))?;
    Ok(())
}

fn print_report(label: &str, report: &MetricReport) {
    println!("{}", MetricReport::table_header());
    println!("{}", report.table_row(label));
}

fn train(cfg: RunConfig, out: &Path, log_every: usize) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let (train_set, val_set) = load_split(&cfg)?;
    log::info!("{} training and {} validation samples", train_set.len(), val_set.len());
    std::fs::write(out.join("config.toml"), cfg.to_toml())?;
    let mut trainer = Trainer::new(&cfg, DType::F32, &Device::Cpu)?;
    let ckpt = out.join("checkpoint.safetensors");
    let mut log = String::from("step\tlr\ttotal\tO1\tO2\tO3\tO4\tM1\tdice\tlambda\n");
    let outcome = trainer.fit(&train_set, &val_set, Some(&ckpt), |row| {
        let term = |o: Output| {
            row.breakdown.structure.iter().find(|(k, _)| *k == o).map(|(_, v)| format!("{v:.6}")).unwrap_or_default()
        };
        let dice = row.breakdown.dice.map(|d| format!("{d:.6}")).unwrap_or_default();
        log.push_str(&format!(
            "{}\t{:.6e}\t{:.6}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            row.step,
            row.lr,
            row.total,
            term(Output::O1),
            term(Output::O2),
            term(Output::O3),
            term(Output::O4),
            term(Output::M1),
            dice,
            row.breakdown.lambda
        ));
        if log_every > 0 && row.step % log_every == 0 {
            println!("{row}");
        }
    })?;
    std::fs::write(out.join("log.tsv"), log)?;
    let validations: Vec<_> = outcome.validations.iter().map(|(s, r)| json!({ "step": s, "report": r })).collect();
    let best = outcome.best.as_ref().map(|(s, r)| json!({ "step": s, "report": r }));
    write_json(
        &out.join("report.json"),
        &json!({ "config_hash": cfg.hash(), "seed": cfg.seed, "validations": validations, "best": best }),
    )?;
    if let Some((step, r)) = &outcome.best {
        print_report(&format!("best@{step}"), r);
    }
    println!("checkpoint: {}", ckpt.display());
    Ok(())
}

fn find_pred(dir: &Path, stem: &str) -> Option<PathBuf> {
    ["png", "jpg", "jpeg"].iter().map(|e| dir.join(format!("{stem}.{e}"))).find(|p| p.is_file())
}

fn eval_dirs(pred: &Path, gt: &Path) -> Result<(MetricReport, Vec<(String, SampleMetrics)>)> {
    let mut stems: Vec<String> = std::fs::read_dir(gt)
        .map_err(|e| LgsanError::Data(format!("{}: {e}", gt.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .filter_map(|p| p.file_stem().and_then(|s| s.to_str()).map(str::to_string))
        .collect();
    stems.sort();
    if stems.is_empty() {
        return Err(LgsanError::Data(format!("no ground-truth PNGs in {}", gt.display())));
    }
    let mut acc = MetricAccumulator::new();
    let mut rows = Vec::new();
    for stem in stems {
        let p = find_pred(pred, &stem)
            .ok_or_else(|| LgsanError::Data(format!("no prediction for {stem} in {}", pred.display())))?;
        let (g, gh, gw) = read_binary_png(&gt.join(format!("{stem}.png")))?;
        let (v, ph, pw) = read_gray_png(&p)?;
        if (gh, gw) != (ph, pw) {
            return Err(LgsanError::Data(format!("{stem}: prediction is {ph}x{pw}, ground truth {gh}x{gw}")));
        }
        let pa = Array2::from_shape_vec((ph, pw), v).expect("length matches");
        let ga = Array2::from_shape_vec((gh, gw), g).expect("length matches");
        let m = evaluate_sample(pa.view(), ga.view())?;
        acc.push(&m);
        rows.push((stem, m));
    }
    Ok((acc.finish(format!("{} vs {}", pred.display(), gt.display())), rows))
}

/// Model from a checkpoint. With an explicit `--config` the checkpoint must
/// match its architecture.
fn open_checkpoint(path: &Path, o: &Overrides) -> Result<(Lgsan, RunConfig)> {
    if o.config.is_some() {
        let cfg = build_config(o)?;
        let mut ps = ParamStore::new(cfg.seed, DType::F32, Device::Cpu);
        let model = Lgsan::new(&cfg, &mut ps)?;
        load_into(path, &cfg, &ps)?;
        return Ok((model, cfg));
    }
    let (model, _, meta) = load_model(path, DType::F32, &Device::Cpu)?;
    Ok((model, meta.config))
}

fn eval_checkpoint(ckpt: &Path, data: Option<&Path>, o: &Overrides) -> Result<(MetricReport, Vec<(String, SampleMetrics)>, RunConfig)> {
    let (model, cfg) = open_checkpoint(ckpt, o)?;
    let samples = match data {
        Some(d) => load_cod_dataset(d, Some(cfg.data.size), &cfg.grounding.prompt_template)?.load_all()?,
        None => load_split(&cfg)?.1,
    };
    if samples.is_empty() {
        return Err(LgsanError::Data("nothing to evaluate".into()));
    }
    let run_id = format!("{}-seed{}", cfg.hash(), cfg.seed);
    let (report, rows) = evaluate(&model, &samples, cfg.optimizer.batch_size, &run_id)?;
    let named = samples.iter().map(|s| s.name.clone()).zip(rows).collect();
    Ok((report, named, cfg))
}

fn eval(pred: Option<PathBuf>, gt: Option<PathBuf>, ckpt: Option<PathBuf>, data: Option<PathBuf>, json_out: Option<PathBuf>, o: &Overrides) -> Result<()> {
    let (report, rows, cfg) = match (pred, gt, ckpt) {
        (Some(p), Some(g), None) => {
            let (r, rows) = eval_dirs(&p, &g)?;
            (r, rows, None)
        }
        (None, _, Some(c)) => {
            let (r, rows, cfg) = eval_checkpoint(&c, data.as_deref(), o)?;
            (r, rows, Some(cfg))
        }
        _ => return Err(LgsanError::Config("eval needs --pred and --gt, or --checkpoint".into())),
    };
    print_report("eval", &report);
    for (name, m) in &rows {
        println!("  {name:<24} S {:.4} E {:.4} Fw {:.4} MAE {:.4}", m.s_alpha, m.e_phi, m.f_w_beta, m.mae);
    }
    if let Some(path) = json_out {
        let samples: BTreeMap<_, _> = rows.iter().map(|(n, m)| (n.clone(), m)).collect();
        write_json(
            &path,
            &json!({
                "report": report,
                "samples": samples,
                "config_hash": cfg.as_ref().map(RunConfig::hash),
                "seed": cfg.as_ref().map(|c| c.seed),
            }),
        )?;
    }
    Ok(())
}

/// Channel-major RGB in `[0, 1]` and its size.
fn read_rgb(path: &Path) -> Result<(Vec<f32>, usize, usize)> {
    let img = image::open(path).map_err(|e| LgsanError::Data(format!("{}: {e}", path.display())))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = vec![0f32; 3 * w * h];
    for (i, p) in img.pixels().enumerate() {
        for c in 0..3 {
            out[c * w * h + i] = p.0[c] as f32 / 255.0;
        }
    }
    Ok((out, h, w))
}

fn resize_map(v: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Result<Vec<f64>> {
    if (h, w) == (oh, ow) {
        return Ok(v.to_vec());
    }
    let t = Tensor::from_vec(v.to_vec(), (1, 1, h, w), &Device::Cpu)?;
    Ok(lgsan::ops::resize_bilinear(&t, oh, ow)?.flatten_all()?.to_vec1()?)
}

fn predict(ckpt: &Path, image: &Path, prompt: Option<String>, category: &str, out: &Path, o: &Overrides) -> Result<()> {
    let (model, cfg) = open_checkpoint(ckpt, o)?;
    let (rgb, h, w) = read_rgb(image)?;
    // Without padding the network needs the training resolution.
    let (mh, mw) = if cfg.model.pad_to_multiple { (h, w) } else { (cfg.data.size, cfg.data.size) };
    let mut x = Tensor::from_vec(rgb.clone(), (1, 3, h, w), &Device::Cpu)?;
    if (mh, mw) != (h, w) {
        x = lgsan::ops::resize_bilinear(&x, mh, mw)?;
    }
    let prompt = prompt.unwrap_or_else(|| cfg.prompt_for(category));
    let preds = model.forward(&x.to_dtype(model.dtype())?, &[prompt.clone()], false)?;
    for w in &preds.warnings {
        log::warn!("{w}");
    }
    std::fs::create_dir_all(out)?;
    let stem = image.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    let mut meta = provenance(&cfg);
    meta.push(("prompt".into(), prompt));
    for which in preds.outputs() {
        meta.retain(|(k, _)| k != "output");
        meta.push(("output".into(), which.name().into()));
        let prob = preds.prob(which)?.expect("listed output").to_dtype(DType::F64)?;
        let map = resize_map(&prob.flatten_all()?.to_vec1()?, mh, mw, h, w)?;
        render::save_gray(&out.join(format!("{stem}_{}.png", which.name())), &map, w, h, &meta)?;
        render::save_overlay(&out.join(format!("{stem}_{}_overlay.png", which.name())), &rgb, &map, w, h, &meta)?;
    }
    println!("wrote {} maps to {}", preds.outputs().len(), out.display());
    Ok(())
}

fn ablate(base: RunConfig, seeds: &[u64], out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let (train_set, val_set) = load_split(&base)?;
    if val_set.is_empty() {
        return Err(LgsanError::Config("ablation needs a validation split; set data.val_fraction > 0".into()));
    }
    let mut rows = Vec::new();
    for flags in AblationFlags::ladder() {
        let mut acc = MetricAccumulator::new();
        let mut runs = Vec::new();
        for &seed in seeds {
            let cfg = RunConfig { flags, seed, ..base.clone() };
            let mut t = Trainer::new(&cfg, DType::F32, &Device::Cpu)?;
            let outcome = t.fit(&train_set, &[], None, |_| {})?;
            let (report, _) = evaluate(&t.model, &val_set, cfg.optimizer.batch_size, &t.run_id())?;
            log::info!("{} seed {seed}: {}", flags.label(), report.table_row(&flags.label()));
            acc.push(&report.metrics());
            runs.push(json!({ "seed": seed, "config_hash": cfg.hash(), "final_loss": outcome.log.last().map(|r| r.total), "report": report }));
        }
        let mean = acc.finish(flags.label());
        rows.push((flags, mean, runs));
    }
    println!("{}", MetricReport::table_header());
    let mut tsv = String::from("flags\tS_alpha\tE_phi\tFw_beta\tMAE\n");
    for (flags, m, _) in &rows {
        println!("{}", m.table_row(&flags.label()));
        tsv.push_str(&format!("{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n", flags.label(), m.s_alpha, m.e_phi, m.f_w_beta, m.mae));
    }
    let mut violations = Vec::new();
    for pair in rows.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if b.1.s_alpha < a.1.s_alpha - 0.01 {
            let v = format!("{} ({:.4}) below {} ({:.4}) by more than 0.01", b.0.label(), b.1.s_alpha, a.0.label(), a.1.s_alpha);
            println!("trend violation: {v}");
            violations.push(v);
        }
    }
    std::fs::write(out.join("ablation.tsv"), tsv)?;
    let table: Vec<_> = rows
        .iter()
        .map(|(f, m, runs)| json!({ "flags": f.label(), "mean": m, "runs": runs }))
        .collect();
    write_json(
        &out.join("ablation.json"),
        &json!({ "config_hash": base.hash(), "seeds": seeds, "rows": table, "trend_violations": violations }),
    )
}

fn gen_data(cfg: &RunConfig, out: &Path, n: Option<usize>, size: Option<usize>, camo: Option<f64>) -> Result<()> {
    let camo = camo.unwrap_or(cfg.data.camo_strength);
    if !(0.0..=1.0).contains(&camo) {
        return Err(LgsanError::Config(format!("--camo must lie in [0, 1], got {camo}")));
    }
    let mut spec = SyntheticSpec::new(n.unwrap_or(cfg.data.samples), size.unwrap_or(cfg.data.size), camo, cfg.data.seed);
    spec.prompt_template = cfg.grounding.prompt_template.clone();
    if spec.n == 0 || spec.size < 8 {
        return Err(LgsanError::Config("need at least one sample of side >= 8".into()));
    }
    let samples: Vec<Sample> = generate_synthetic(&spec);
    save_dataset(out, &samples)?;
    println!("wrote {} samples to {}", samples.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let o = &cli.overrides;
    match cli.command {
        Command::Train { out, data, steps, log_every } => {
            let mut cfg = build_config(o)?;
            if let Some(d) = data {
                cfg.data.root = Some(d);
            }
            if let Some(s) = steps {
                cfg.optimizer.steps = s;
            }
            cfg.validate()?;
            train(cfg, &out, log_every)
        }
        Command::Eval { pred, gt, checkpoint, data, json } => eval(pred, gt, checkpoint, data, json, o),
        Command::Predict { checkpoint, image, prompt, category, out } => predict(&checkpoint, &image, prompt, &category, &out, o),
        Command::Ablate { out, seeds, steps } => {
            let mut cfg = build_config(o)?;
            if let Some(s) = steps {
                cfg.optimizer.steps = s;
            }
            cfg.validate()?;
            ablate(cfg, &seeds, &out)
        }
        Command::GenData { out, n, size, camo } => gen_data(&build_config(o)?, &out, n, size, camo),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
