use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::config::{ResolvedConfig, RunConfig};
use super::{
    AblateArgs, ColorArg, Command, EvalArgs, FuseArgs, FusionTarget, PathArg, PretrainArgs,
    PretrainStage, Study, SynthArgs, TrainArgs,
};
use crate::data::{mix_seed, pretraining_corpus, scan_pairs, synth_pairs, Pair, Split, SynthOptions};
use crate::error::{Error, Result};
use crate::imaging::{read_png, write_png, Image, Range};
use crate::losses::loss_fusion_total;
use crate::metrics::{evaluate, png_stems};
use crate::model::{
    fuse_images, load_checkpoint, probe_layer_sweep, save_checkpoint, ColorMode, FusionPath,
    Group, ModelParams, ProbeMode, MANIFEST,
};
use crate::imaging::max_fuse;
use crate::training::{
    fused_image, guided_train, hierarchical_train, joint_fusion_train, mean_fusion_loss,
    pretrain_decoder, pretrain_encoder_mae, reconstruction_psnr, FusionSource, Stage,
    TrainLog, TrainPlan,
};

const ENCODER_CKPT: &str = "encoder";
const DECODER_CKPT: &str = "decoder";
const CFM_CKPT: &str = "cfm";
const FINAL_CKPT: &str = "final";
const RESUME_TAG: u64 = 0x5245_5355;
/// Pairs shown side by side in ablation outputs.
const DISPLAY_PAIRS: usize = 4;

pub(super) fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Pretrain(a) => pretrain(a),
        Command::Train(a) => train(a),
        Command::Fuse(a) => fuse(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    if a.patch == 0 || a.size % a.patch != 0 {
        return Err(Error::Config(format!(
            "size {} is not a multiple of patch {}",
            a.size, a.patch
        )));
    }
    let set = synth_pairs(a.n, a.size, a.seed, &a.out, SynthOptions { overexposure: a.overexposure })?;
    log::info!("wrote {} pairs to {}", set.len(), a.out.display());
    Ok(())
}

fn load_config(path: &Path) -> Result<ResolvedConfig> {
    let cfg = match RunConfig::read(path) {
        Err(Error::Io { path, source }) => {
            return Err(Error::Config(format!("cannot read {}: {source}", path.display())))
        }
        other => other?,
    };
    let resolved = cfg.resolve()?;
    resolved.write_echo(&resolved.paths.output_dir)?;
    Ok(resolved)
}

struct Corpus {
    train: Vec<Pair>,
    test: Vec<Pair>,
}

fn load_corpus(cfg: &ResolvedConfig) -> Result<Corpus> {
    let set = scan_pairs(&cfg.paths.data_root)?.with_holdout(cfg.holdout)?;
    let crop = |pairs: Vec<Pair>| -> Result<Vec<Pair>> {
        pairs
            .into_iter()
            .map(|p| {
                let (v, i) = match cfg.crop {
                    Some(c) => (p.visible.center_crop(c, c)?, p.infrared.center_crop(c, c)?),
                    None => (p.visible, p.infrared),
                };
                Ok(Pair { stem: p.stem, visible: v, infrared: i })
            })
            .collect()
    };
    let train = crop(set.subset(Split::Train).load()?)?;
    let test = crop(set.subset(Split::Test).load()?)?;
    if train.is_empty() {
        return Err(Error::Data(format!(
            "no training pairs under {}",
            cfg.paths.data_root.display()
        )));
    }
    Ok(Corpus { train, test })
}

impl Corpus {
    /// Held-out pairs, or the first training pairs when nothing is held out.
    fn evaluation(&self) -> &[Pair] {
        if self.test.is_empty() {
            &self.train[..self.train.len().min(DISPLAY_PAIRS)]
        } else {
            &self.test
        }
    }

    fn display(&self) -> &[Pair] {
        let e = self.evaluation();
        &e[..e.len().min(DISPLAY_PAIRS)]
    }
}

fn ckpt_dir(cfg: &ResolvedConfig, name: &str) -> PathBuf {
    cfg.paths.checkpoint_dir.join(name)
}

fn require_checkpoint(dir: &Path, hint: &str) -> Result<(ModelParams, BTreeMap<String, Value>)> {
    if !dir.join(MANIFEST).is_file() {
        return Err(Error::MissingPrerequisite(format!(
            "no checkpoint at {} ({hint})",
            dir.display()
        )));
    }
    let (params, manifest) = load_checkpoint(dir)?;
    Ok((params, manifest.meta))
}

fn require_frozen(params: &ModelParams, groups: &[Group], dir: &Path) -> Result<()> {
    let open: Vec<&str> = groups
        .iter()
        .filter(|g| !params.is_frozen(**g))
        .map(|g| g.as_str())
        .collect();
    if open.is_empty() {
        Ok(())
    } else {
        Err(Error::MissingPrerequisite(format!(
            "checkpoint {} has unfrozen prerequisite group(s): {}",
            dir.display(),
            open.join(", ")
        )))
    }
}

fn check_config(params: &ModelParams, cfg: &ResolvedConfig, dir: &Path) -> Result<()> {
    if params.cfg != cfg.model {
        return Err(Error::Config(format!(
            "checkpoint {} was written for {:?}, config asks for {:?}",
            dir.display(),
            params.cfg,
            cfg.model
        )));
    }
    Ok(())
}

fn meta(stage: &str, steps_done: usize, plans: &[&TrainPlan]) -> Result<BTreeMap<String, Value>> {
    let mut m = BTreeMap::new();
    m.insert("stage".into(), json!(stage));
    m.insert("steps_done".into(), json!(steps_done));
    m.insert("plans".into(), serde_json::to_value(plans)?);
    Ok(m)
}

fn logs_dir(cfg: &ResolvedConfig) -> PathBuf {
    cfg.paths.output_dir.join("logs")
}

fn write_log(cfg: &ResolvedConfig, name: &str, log: &TrainLog) -> Result<()> {
    let dir = logs_dir(cfg);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    log.write_jsonl(&dir.join(format!("{name}.jsonl")), false)?;
    log.write_timing(&dir.join(format!("{name}.timing.csv")))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

fn steps_done(meta: &BTreeMap<String, Value>) -> usize {
    meta.get("steps_done").and_then(Value::as_u64).unwrap_or(0) as usize
}

/// Restores `(params, previous log, steps already taken)` for `--resume`.
fn resume_from(cfg: &ResolvedConfig, name: &str, group: Group) -> Result<(ModelParams, TrainLog, usize)> {
    let dir = ckpt_dir(cfg, name);
    let (mut params, meta) = require_checkpoint(&dir, "nothing to resume")?;
    check_config(&params, cfg, &dir)?;
    params.set_frozen(group, false);
    let log_path = logs_dir(cfg).join(format!("{name}.jsonl"));
    let previous = if log_path.is_file() {
        TrainLog::read_jsonl(&log_path)?
    } else {
        TrainLog::default()
    };
    Ok((params, previous, steps_done(&meta)))
}

fn pretrain(a: PretrainArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let corpus = load_corpus(&cfg)?;
    let images = pretraining_corpus(&corpus.train);
    let (name, base_plan) = match a.stage {
        PretrainStage::Mae => (ENCODER_CKPT, cfg.plans.mae.clone()),
        PretrainStage::Decoder => (DECODER_CKPT, cfg.plans.decoder.clone()),
    };
    let (mut params, previous, done) = if a.resume {
        let group = match a.stage {
            PretrainStage::Mae => Group::Encoder,
            PretrainStage::Decoder => Group::Decoder,
        };
        resume_from(&cfg, name, group)?
    } else {
        let params = match a.stage {
            PretrainStage::Mae => ModelParams::init(&cfg.model, cfg.seed)?,
            PretrainStage::Decoder => {
                let dir = ckpt_dir(&cfg, ENCODER_CKPT);
                let (p, _) = require_checkpoint(&dir, "run `maefuse pretrain --stage mae` first")?;
                check_config(&p, &cfg, &dir)?;
                require_frozen(&p, &[Group::Encoder], &dir)?;
                p
            }
        };
        (params, TrainLog::default(), 0)
    };
    let mut plan = base_plan;
    if done > 0 {
        // a continued run draws fresh batches instead of replaying the first ones
        plan.seed = mix_seed(plan.seed, RESUME_TAG, done as u64);
    }
    let log = match a.stage {
        PretrainStage::Mae => pretrain_encoder_mae(&images, &mut params, &plan)?,
        PretrainStage::Decoder => pretrain_decoder(&images, &mut params, &plan)?,
    };
    let trained = match a.stage {
        PretrainStage::Mae => Group::Encoder,
        PretrainStage::Decoder => Group::Decoder,
    };
    params.freeze(trained);
    let dir = ckpt_dir(&cfg, name);
    save_checkpoint(&params, &dir, meta(name, done + plan.total_steps, &[&plan])?)?;
    let mut full = previous;
    full.extend(log);
    full.checkpoint = Some(dir.clone());
    write_log(&cfg, name, &full)?;
    if !corpus.test.is_empty() {
        let held = pretraining_corpus(&corpus.test);
        let psnr = reconstruction_psnr(&held, &params)?;
        log::info!("held-out reconstruction PSNR {psnr:.2} dB");
        write_json(
            &cfg.paths.output_dir.join(format!("{name}_summary.json")),
            &json!({ "steps_done": done + plan.total_steps, "heldout_psnr": psnr }),
        )?;
    }
    log::info!("saved {}", dir.display());
    Ok(())
}

fn load_fusion_base(cfg: &ResolvedConfig, name: &str, groups: &[Group]) -> Result<ModelParams> {
    let dir = ckpt_dir(cfg, name);
    let hint = if name == DECODER_CKPT {
        "run `maefuse pretrain --stage decoder` first"
    } else {
        "run `maefuse train --target cfm` first"
    };
    let (params, _) = require_checkpoint(&dir, hint)?;
    check_config(&params, cfg, &dir)?;
    require_frozen(&params, groups, &dir)?;
    Ok(params)
}

fn fusion_summary(cfg: &ResolvedConfig, corpus: &Corpus, params: &ModelParams, source: FusionSource) -> Result<Value> {
    let pairs = corpus.evaluation();
    Ok(json!({
        "pairs": pairs.len(),
        "fusion_loss": mean_fusion_loss(pairs, params, source, cfg.loss)?,
        "feature_mean_loss": mean_fusion_loss(pairs, params, FusionSource::FeatureMean, cfg.loss)?,
    }))
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let corpus = load_corpus(&cfg)?;
    let (name, log, params, source) = if a.hierarchical {
        let mut params = load_fusion_base(&cfg, DECODER_CKPT, &[Group::Encoder, Group::Decoder])?;
        let log = hierarchical_train(&corpus.train, &mut params, &cfg.plans.cfm, &cfg.plans.mfm, cfg.loss)?;
        (FINAL_CKPT, log, params, FusionSource::Full)
    } else {
        match a.target.expect("clap enforces a mode") {
            FusionTarget::Cfm => {
                let mut params =
                    load_fusion_base(&cfg, DECODER_CKPT, &[Group::Encoder, Group::Decoder])?;
                let log = guided_train(&corpus.train, &mut params, &cfg.plans.cfm, cfg.loss)?;
                (CFM_CKPT, log, params, FusionSource::CfmOnly)
            }
            FusionTarget::Mfm => {
                let mut params =
                    load_fusion_base(&cfg, CFM_CKPT, &[Group::Encoder, Group::Decoder, Group::Cfm])?;
                let log = guided_train(&corpus.train, &mut params, &cfg.plans.mfm, cfg.loss)?;
                (FINAL_CKPT, log, params, FusionSource::Full)
            }
        }
    };
    let mut params = params;
    let plans: Vec<&TrainPlan> = match (a.hierarchical, name) {
        (true, _) => vec![&cfg.plans.cfm, &cfg.plans.mfm],
        (false, CFM_CKPT) => vec![&cfg.plans.cfm],
        _ => vec![&cfg.plans.mfm],
    };
    let trained: &[Group] = if name == CFM_CKPT { &[Group::Cfm] } else { &[Group::Cfm, Group::Mfm, Group::Ffn] };
    for g in trained {
        params.freeze(*g);
    }
    let dir = ckpt_dir(&cfg, name);
    save_checkpoint(&params, &dir, meta(name, log.len(), &plans)?)?;
    let mut log = log;
    log.checkpoint = Some(dir.clone());
    let log_name = if a.hierarchical { "hierarchical" } else { name_of_target(name) };
    write_log(&cfg, log_name, &log)?;
    let summary = fusion_summary(&cfg, &corpus, &params, source)?;
    log::info!("{log_name}: {summary}");
    write_json(&cfg.paths.output_dir.join(format!("{log_name}_summary.json")), &summary)?;
    Ok(())
}

fn name_of_target(ckpt: &str) -> &'static str {
    if ckpt == CFM_CKPT {
        "cfm"
    } else {
        "mfm"
    }
}

fn fuse(a: FuseArgs) -> Result<()> {
    let (params, _) = require_checkpoint(&a.checkpoint, "train a model first")?;
    let mode = match a.color {
        ColorArg::Gray => ColorMode::Gray,
        ColorArg::YcbcrReattach => ColorMode::YcbcrReattach,
    };
    let path = match a.path {
        PathArg::Full => FusionPath::Full,
        PathArg::CfmOnly => FusionPath::CfmOnly,
    };
    let one = |vi: &Path, ir: &Path, out: &Path| -> Result<()> {
        let v = read_png(vi, Range::Unit)?;
        let i = read_png(ir, Range::Unit)?;
        let f = fuse_images(&v, &i, &params, mode, path)?;
        write_png(out, &to_output(f)?)
    };
    if a.vi.is_dir() || a.ir.is_dir() {
        let sv = png_stems(&a.vi)?;
        let si = png_stems(&a.ir)?;
        let unmatched: Vec<&str> = sv.symmetric_difference(&si).map(String::as_str).collect();
        if !unmatched.is_empty() {
            return Err(Error::Data(format!("unmatched stems: [{}]", unmatched.join(", "))));
        }
        if sv.is_empty() {
            return Err(Error::Data(format!("no PNG files in {}", a.vi.display())));
        }
        fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
        for s in &sv {
            let file = format!("{s}.png");
            one(&a.vi.join(&file), &a.ir.join(&file), &a.out.join(&file))?;
        }
        log::info!("fused {} pairs into {}", sv.len(), a.out.display());
        Ok(())
    } else {
        if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        one(&a.vi, &a.ir, &a.out)
    }
}

/// PNG output is gray or RGB; a re-attached YCbCr result is converted back to RGB.
fn to_output(img: Image) -> Result<Image> {
    use crate::imaging::{convert_colorspace, ColorSpace};
    match img.colorspace() {
        ColorSpace::YCbCr => convert_colorspace(&img, ColorSpace::Rgb),
        _ => Ok(img),
    }
}

fn eval(a: EvalArgs) -> Result<()> {
    let report = evaluate(&a.vi, &a.ir, &a.fused)?;
    if let Some(parent) = a.out_report.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    report.write(&a.out_report.with_extension("csv"), &a.out_report.with_extension("json"))?;
    let m = &report.aggregate;
    println!(
        "cc {:.4} scd {:.4} psnr {:.2} nabf {:.4} nlpd {:.4} ({} images)",
        m.cc,
        m.scd,
        m.psnr,
        m.nabf,
        m.nlpd,
        report.rows.len()
    );
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let corpus = load_corpus(&cfg)?;
    let base = load_fusion_base(&cfg, DECODER_CKPT, &[Group::Encoder, Group::Decoder])?;
    match a.study {
        Study::TwoStage => two_stage(&cfg, &corpus, &base),
        Study::Hierarchy => hierarchy(&cfg, &corpus, &base),
        Study::FeatureProbe => feature_probe(&cfg, &corpus, &base),
    }
}

fn study_dir(cfg: &ResolvedConfig, name: &str) -> Result<PathBuf> {
    let dir = cfg.paths.output_dir.join("ablate").join(name);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn save_fused(dir: &Path, pairs: &[Pair], params: &ModelParams, source: FusionSource, tag: &str) -> Result<()> {
    for p in pairs {
        let f = fused_image(p, params, source)?;
        write_png(dir.join(format!("{}_{tag}.png", p.stem)), &f)?;
    }
    Ok(())
}

fn curves_csv(runs: &[(&str, &TrainLog)]) -> String {
    let mut out = String::from("run,step,stage,loss\n");
    for (name, log) in runs {
        for r in &log.records {
            out.push_str(&format!("{name},{},{},{}\n", r.step, r.stage, r.loss));
        }
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Stage-1 alignment then fusion loss, against fusion loss alone for the same number of
/// steps. Both runs share the seed, so they see the same batches.
fn two_stage(cfg: &ResolvedConfig, corpus: &Corpus, base: &ModelParams) -> Result<()> {
    let dir = study_dir(cfg, "two-stage")?;
    let guided = TrainPlan {
        total_steps: 50,
        align_steps: 25,
        ..cfg.plans.cfm.clone()
    };
    let direct = TrainPlan {
        align_steps: 0,
        ..guided.clone()
    };
    let mut a = base.duplicate()?;
    let la = guided_train(&corpus.train, &mut a, &guided, cfg.loss)?;
    let mut b = base.duplicate()?;
    let lb = guided_train(&corpus.train, &mut b, &direct, cfg.loss)?;
    write_text(&dir.join("curves.csv"), &curves_csv(&[("two-stage", &la), ("direct", &lb)]))?;
    save_fused(&dir, corpus.display(), &a, FusionSource::CfmOnly, "two-stage")?;
    save_fused(&dir, corpus.display(), &b, FusionSource::CfmOnly, "direct")?;
    let last = |l: &TrainLog| l.losses().last().copied().unwrap_or(f64::NAN);
    let align = la.stage_losses(Stage::Align);
    let summary = json!({
        "plan": guided,
        "final_fusion_loss": { "two-stage": last(&la), "direct": last(&lb) },
        "align_loss": { "first": align.first(), "last": align.last() },
        "heldout_fusion_loss": {
            "two-stage": mean_fusion_loss(corpus.evaluation(), &a, FusionSource::CfmOnly, cfg.loss)?,
            "direct": mean_fusion_loss(corpus.evaluation(), &b, FusionSource::CfmOnly, cfg.loss)?,
        },
    });
    log::info!("two-stage: {summary}");
    write_json(&dir.join("summary.json"), &summary)
}

/// MFM training with the CFM frozen (the hierarchical schedule) against MFM training
/// with the CFM left trainable, both starting from the same trained CFM.
fn hierarchy(cfg: &ResolvedConfig, corpus: &Corpus, base: &ModelParams) -> Result<()> {
    let dir = study_dir(cfg, "hierarchy")?;
    let mut start = base.duplicate()?;
    let lc = guided_train(&corpus.train, &mut start, &cfg.plans.cfm, cfg.loss)?;
    let mut frozen = start.duplicate()?;
    frozen.freeze(Group::Cfm);
    let lf = guided_train(&corpus.train, &mut frozen, &cfg.plans.mfm, cfg.loss)?;
    let mut active = start.duplicate()?;
    let la = joint_fusion_train(&corpus.train, &mut active, &cfg.plans.mfm, cfg.loss)?;
    write_text(
        &dir.join("curves.csv"),
        &curves_csv(&[("cfm", &lc), ("cfm-frozen", &lf), ("cfm-active", &la)]),
    )?;
    save_fused(&dir, corpus.display(), &frozen, FusionSource::Full, "cfm-frozen")?;
    save_fused(&dir, corpus.display(), &active, FusionSource::Full, "cfm-active")?;
    let eval = corpus.evaluation();
    let summary = json!({
        "heldout_fusion_loss": {
            "cfm-only": mean_fusion_loss(eval, &start, FusionSource::CfmOnly, cfg.loss)?,
            "cfm-frozen": mean_fusion_loss(eval, &frozen, FusionSource::Full, cfg.loss)?,
            "cfm-active": mean_fusion_loss(eval, &active, FusionSource::Full, cfg.loss)?,
            "feature-mean": mean_fusion_loss(eval, base, FusionSource::FeatureMean, cfg.loss)?,
        },
    });
    log::info!("hierarchy: {summary}");
    write_json(&dir.join("summary.json"), &summary)
}

/// Mean and max token fusion after every encoder depth, plus pixel-domain max fusion,
/// each scored by its Laplacian loss (against the larger source Laplacian magnitude).
fn feature_probe(cfg: &ResolvedConfig, corpus: &Corpus, base: &ModelParams) -> Result<()> {
    let dir = study_dir(cfg, "feature-probe")?;
    let mut csv = String::from("stem,mode,layer,l_lap\n");
    for p in corpus.display() {
        let v = p.visible.crop_to_multiple(base.cfg.patch)?;
        let i = p.infrared.crop_to_multiple(base.cfg.patch)?;
        let target = max_fuse(&v, &i)?;
        let score = |f: &Image| -> Result<f64> { Ok(loss_fusion_total(f, &v, &i, cfg.loss)?.1.laplacian) };
        write_png(dir.join(format!("{}_pixel_max.png", p.stem)), &target)?;
        csv.push_str(&format!("{},pixel-max,,{}\n", p.stem, score(&target)?));
        for (mode, label) in [(ProbeMode::Mean, "mean"), (ProbeMode::Max, "max")] {
            for (layer, img) in probe_layer_sweep(&v, &i, base, mode)?.iter().enumerate() {
                write_png(dir.join(format!("{}_{label}_l{layer}.png", p.stem)), img)?;
                csv.push_str(&format!("{},{label},{layer},{}\n", p.stem, score(img)?));
            }
        }
    }
    write_text(&dir.join("probe.csv"), &csv)
}
