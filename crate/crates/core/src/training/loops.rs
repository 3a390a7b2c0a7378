use std::time::Instant;

use candle_core::{Tensor, Var};

use super::log::{LogRecord, Stage, TrainLog};
use super::optim::{AdamW, AdamWConfig};
use super::plan::{Target, TrainPlan};
use crate::data::{mix_seed, EpochSampler, Pair};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::losses::{loss_align_t, loss_decoder_t, loss_fusion_t, scalar, LossWeights};
use crate::model::{
    decode_masked, decode_raw, encode_masked, encode_tensor, fuse_tokens, images_to_tensor,
    patchify_tensor, random_mask, FusionPath, Group, ModelParams,
};

/// Called after every optimizer step with the step's record and the updated parameters.
pub type Observer<'a> = dyn FnMut(&LogRecord, &ModelParams) -> Result<()> + 'a;

const MASK_TAG: u64 = 0x4D41_534B;

fn no_observer() -> impl FnMut(&LogRecord, &ModelParams) -> Result<()> {
    |_, _| Ok(())
}

fn check_plan(plan: &TrainPlan, expected: &[Target]) -> Result<()> {
    plan.validate()?;
    if !expected.contains(&plan.target) {
        return Err(Error::Config(format!(
            "plan targets {:?}, expected one of {expected:?}",
            plan.target
        )));
    }
    Ok(())
}

fn check_prerequisites(params: &ModelParams, target: Target) -> Result<()> {
    let open: Vec<String> = target
        .prerequisites()
        .iter()
        .filter(|g| !params.is_frozen(**g))
        .map(|g| g.to_string())
        .collect();
    if !open.is_empty() {
        return Err(Error::Config(format!(
            "{target:?} training needs frozen groups: {}",
            open.join(", ")
        )));
    }
    Ok(())
}

fn optimizer(params: &ModelParams, plan: &TrainPlan, extra: &[Group]) -> Result<AdamW> {
    let groups: Vec<Group> = plan
        .target
        .trainable()
        .iter()
        .chain(extra)
        .copied()
        .filter(|g| !params.is_frozen(*g))
        .collect();
    if groups.is_empty() {
        return Err(Error::Config(format!(
            "every group trained by {:?} is frozen",
            plan.target
        )));
    }
    let vars: Vec<Var> = groups
        .iter()
        .flat_map(|g| params.group_vars(*g))
        .map(|(_, v)| v.clone())
        .collect();
    AdamW::new(vars, AdamWConfig::new(plan.lr, plan.weight_decay))
}

/// Crops every image to the patch grid and checks they share one size.
fn uniform(images: &[&Image], patch: usize) -> Result<Vec<Image>> {
    let out: Vec<Image> = images
        .iter()
        .map(|img| img.crop_to_multiple(patch))
        .collect::<Result<_>>()?;
    if let Some(first) = out.first() {
        if let Some(odd) = out.iter().find(|i| i.dims() != first.dims()) {
            return Err(Error::Data(format!(
                "corpus mixes {}x{} with {}x{} images",
                first.height(),
                first.width(),
                odd.height(),
                odd.width()
            )));
        }
    }
    Ok(out)
}

fn stack(images: &[Image], idx: &[usize], params: &ModelParams) -> Result<Tensor> {
    let batch: Vec<&Image> = idx.iter().map(|&k| &images[k]).collect();
    images_to_tensor(&batch, params.cfg.dtype())
}

struct Step {
    loss: Tensor,
    stage: Stage,
    components: Option<crate::losses::FusionComponents>,
}

/// Shared optimizer loop: `step_fn` builds the loss for step `t`.
fn run(
    params: &ModelParams,
    plan: &TrainPlan,
    extra: &[Group],
    mut step_fn: impl FnMut(usize) -> Result<Step>,
    observer: &mut Observer<'_>,
) -> Result<TrainLog> {
    let mut opt = optimizer(params, plan, extra)?;
    let mut log = TrainLog::default();
    let start = Instant::now();
    for t in 0..plan.total_steps {
        let Step {
            loss,
            stage,
            components,
        } = step_fn(t)?;
        let value = scalar(&loss)?;
        if !value.is_finite() {
            return Err(Error::Numerical(format!("{stage} loss diverged at step {t}")));
        }
        opt.step(&loss.backward()?)?;
        let record = LogRecord {
            step: t,
            stage,
            loss: value,
            components,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        if t % plan.log_every == 0 || t + 1 == plan.total_steps {
            log::info!("{:?} step {t} [{stage}] loss {value:.6}", plan.target);
        }
        observer(&record, params)?;
        log.records.push(record);
    }
    Ok(log)
}

/// Masked-autoencoder pretraining of encoder and decoder. The reconstruction error is
/// measured on the masked patches only (on every patch when nothing is masked).
pub fn pretrain_encoder_mae(
    images: &[Image],
    params: &mut ModelParams,
    plan: &TrainPlan,
) -> Result<TrainLog> {
    pretrain_encoder_mae_observed(images, params, plan, &mut no_observer())
}

pub fn pretrain_encoder_mae_observed(
    images: &[Image],
    params: &mut ModelParams,
    plan: &TrainPlan,
    observer: &mut Observer<'_>,
) -> Result<TrainLog> {
    check_plan(plan, &[Target::EncoderMae])?;
    if images.is_empty() {
        return Err(Error::Data("MAE pretraining needs at least one image".into()));
    }
    let refs: Vec<&Image> = images.iter().collect();
    let corpus = uniform(&refs, params.cfg.patch)?;
    let mut sampler = EpochSampler::new(corpus.len(), plan.batch, plan.seed)?;
    let p: &ModelParams = params;
    run(
        p,
        plan,
        &[],
        |t| {
            let x = stack(&corpus, &sampler.next_indices(), p)?;
            let (target, grid) = patchify_tensor(&x, p.cfg.patch)?;
            let mask = random_mask(
                grid.tokens(),
                p.cfg.mask_ratio,
                mix_seed(plan.seed, MASK_TAG, t as u64),
            )?;
            let latent = encode_masked(&x, p, &mask)?;
            let pred = decode_masked(&latent, &mask, grid, p)?;
            let hidden = mask.masked_indices();
            let loss = if hidden.is_empty() {
                (pred - target)?.abs()?.mean_all()?
            } else {
                let v: Vec<u32> = hidden.iter().map(|&i| i as u32).collect();
                let idx = Tensor::from_vec(v, hidden.len(), x.device())?;
                (pred.index_select(&idx, 1)? - target.index_select(&idx, 1)?)?
                    .abs()?
                    .mean_all()?
            };
            Ok(Step {
                loss,
                stage: Stage::Mae,
                components: None,
            })
        },
        observer,
    )
}

/// Decoder pretraining against a frozen encoder: mean absolute reconstruction error of
/// `decode(encode(x))`.
pub fn pretrain_decoder(
    images: &[Image],
    params: &mut ModelParams,
    plan: &TrainPlan,
) -> Result<TrainLog> {
    pretrain_decoder_observed(images, params, plan, &mut no_observer())
}

pub fn pretrain_decoder_observed(
    images: &[Image],
    params: &mut ModelParams,
    plan: &TrainPlan,
    observer: &mut Observer<'_>,
) -> Result<TrainLog> {
    check_plan(plan, &[Target::Decoder])?;
    check_prerequisites(params, Target::Decoder)?;
    if images.is_empty() {
        return Err(Error::Data("decoder pretraining needs at least one image".into()));
    }
    let refs: Vec<&Image> = images.iter().collect();
    let corpus = uniform(&refs, params.cfg.patch)?;
    let mut sampler = EpochSampler::new(corpus.len(), plan.batch, plan.seed)?;
    let p: &ModelParams = params;
    run(
        p,
        plan,
        &[],
        |_| {
            let x = stack(&corpus, &sampler.next_indices(), p)?;
            let phi = encode_tensor(&x, p)?.detach();
            let loss = loss_decoder_t(&decode_raw(&phi, p)?, &x)?;
            Ok(Step {
                loss,
                stage: Stage::Recon,
                components: None,
            })
        },
        observer,
    )
}

/// Guided two-stage training of one fusion module. Steps `t < align_steps` pull the
/// module output towards the encoder feature mean; later steps minimize the fusion loss
/// of the decoded output. `Target::Cfm` feeds `Φ_D` straight to the decoder.
pub fn guided_train(
    pairs: &[Pair],
    params: &mut ModelParams,
    plan: &TrainPlan,
    weights: LossWeights,
) -> Result<TrainLog> {
    guided_train_observed(pairs, params, plan, weights, &mut no_observer())
}

pub fn guided_train_observed(
    pairs: &[Pair],
    params: &mut ModelParams,
    plan: &TrainPlan,
    weights: LossWeights,
    observer: &mut Observer<'_>,
) -> Result<TrainLog> {
    check_plan(plan, &[Target::Cfm, Target::Mfm])?;
    check_prerequisites(params, plan.target)?;
    guided(pairs, params, plan, weights, &[], observer)
}

/// The MFM phase with the CFM left trainable: MFM, FFN and CFM are optimized together on
/// the full path. This is the counterpart of hierarchical freezing used by ablations.
pub fn joint_fusion_train(
    pairs: &[Pair],
    params: &mut ModelParams,
    plan: &TrainPlan,
    weights: LossWeights,
) -> Result<TrainLog> {
    check_plan(plan, &[Target::Mfm])?;
    check_prerequisites(params, Target::Cfm)?;
    if params.is_frozen(Group::Cfm) {
        return Err(Error::Config("joint training needs an unfrozen CFM".into()));
    }
    guided(pairs, params, plan, weights, &[Group::Cfm], &mut no_observer())
}

fn guided(
    pairs: &[Pair],
    params: &mut ModelParams,
    plan: &TrainPlan,
    weights: LossWeights,
    extra: &[Group],
    observer: &mut Observer<'_>,
) -> Result<TrainLog> {
    weights.validate()?;
    if pairs.is_empty() {
        return Err(Error::Data("guided training needs at least one pair".into()));
    }
    let patch = params.cfg.patch;
    let vis: Vec<&Image> = pairs.iter().map(|p| &p.visible).collect();
    let ir: Vec<&Image> = pairs.iter().map(|p| &p.infrared).collect();
    let vis = uniform(&vis, patch)?;
    let ir = uniform(&ir, patch)?;
    if vis[0].dims() != ir[0].dims() {
        return Err(Error::Data("visible and infrared sizes differ".into()));
    }
    let path = match plan.target {
        Target::Cfm => FusionPath::CfmOnly,
        _ => FusionPath::Full,
    };
    let mut sampler = EpochSampler::new(pairs.len(), plan.batch, plan.seed)?;
    let p: &ModelParams = params;
    run(
        p,
        plan,
        extra,
        |t| {
            let idx = sampler.next_indices();
            let v = stack(&vis, &idx, p)?;
            let i = stack(&ir, &idx, p)?;
            let phi_v = encode_tensor(&v, p)?.detach();
            let phi_i = encode_tensor(&i, p)?.detach();
            let out = fuse_tokens(&phi_i, &phi_v, p, path)?.fused;
            if t < plan.align_steps {
                Ok(Step {
                    loss: loss_align_t(&out.tokens, &phi_i.tokens, &phi_v.tokens)?,
                    stage: Stage::Align,
                    components: None,
                })
            } else {
                let terms = loss_fusion_t(&decode_raw(&out, p)?, &v, &i, weights)?;
                Ok(Step {
                    components: Some(terms.values()?),
                    loss: terms.total,
                    stage: Stage::Fusion,
                })
            }
        },
        observer,
    )
}

/// CFM first, then freeze it and train MFM + FFN. Steps of the merged log are numbered
/// continuously across both phases.
pub fn hierarchical_train(
    pairs: &[Pair],
    params: &mut ModelParams,
    cfm_plan: &TrainPlan,
    mfm_plan: &TrainPlan,
    weights: LossWeights,
) -> Result<TrainLog> {
    hierarchical_train_observed(pairs, params, cfm_plan, mfm_plan, weights, &mut no_observer())
}

pub fn hierarchical_train_observed(
    pairs: &[Pair],
    params: &mut ModelParams,
    cfm_plan: &TrainPlan,
    mfm_plan: &TrainPlan,
    weights: LossWeights,
    observer: &mut Observer<'_>,
) -> Result<TrainLog> {
    check_plan(cfm_plan, &[Target::Cfm])?;
    check_plan(mfm_plan, &[Target::Mfm])?;
    let mut log = guided_train_observed(pairs, params, cfm_plan, weights, observer)?;
    params.freeze(Group::Cfm);
    let offset = cfm_plan.total_steps;
    let mut shifted = |r: &LogRecord, p: &ModelParams| {
        let mut r = r.clone();
        r.step += offset;
        observer(&r, p)
    };
    let mfm = guided_train_observed(pairs, params, mfm_plan, weights, &mut shifted)?;
    log.extend(mfm);
    Ok(log)
}
