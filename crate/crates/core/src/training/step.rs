//! One alternating optimization step.

use crate::config::ExperimentConfig;
use crate::data::{Domain, DomainBatch};
use crate::error::{Error, Result};
use crate::losses::{
    lsgan_d_loss_with_grad, lsgan_g_adv_loss_with_grad, lsgan_g_adv_symmetric_with_grad,
    segmentation_loss_with_grad, total_generator_objective, LossBreakdown, LossTerms, ProbDims,
};
use crate::networks::{apply_updates, Discriminator, Mode, SegVars};
use crate::nn::{Adam, Graph, Var};
use crate::tensor::Tensor;

use super::state::TrainState;

fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

fn to_tensor(shape: &[usize], v: Vec<f64>) -> Tensor {
    Tensor::from_vec(shape, v.into_iter().map(|x| x as f32).collect()).expect("gradient shape")
}

fn non_finite(name: &str) -> Error {
    Error::NonFinite(format!("loss `{name}`"))
}

fn check_batches(source: &DomainBatch, target: &DomainBatch, cfg: &ExperimentConfig) -> Result<()> {
    let expect = [cfg.batch_size, 3, cfg.crop_size, cfg.crop_size];
    for (name, b) in [("source", source), ("target", target)] {
        if b.images.shape() != expect {
            return Err(Error::Shape(format!(
                "{name} batch is {:?}, expected {expect:?}",
                b.images.shape()
            )));
        }
    }
    let masks = source
        .masks
        .as_ref()
        .ok_or_else(|| Error::Precondition("source batch has no masks".into()))?;
    if masks.shape() != [cfg.batch_size, cfg.crop_size, cfg.crop_size] {
        return Err(Error::Shape(format!("source masks are {:?}", masks.shape())));
    }
    if source.domain != Domain::Source || target.domain != Domain::Target {
        return Err(Error::Precondition(format!(
            "expected a source and a target batch, got {} and {}",
            source.domain, target.domain
        )));
    }
    if target.masks.is_some() {
        return Err(Error::Precondition("target batch must be unlabeled".into()));
    }
    Ok(())
}

/// Records the segmentation loss on `logits` and returns `(node, ce, dice)`.
fn segmentation_node(
    graph: &mut Graph,
    logits: Var,
    masks: &Tensor,
    cfg: &ExperimentConfig,
) -> Result<(Var, f64, f64)> {
    let probs = graph.softmax(logits);
    let (b, _, h, w) = graph.value(probs).dims4();
    let dims = ProbDims {
        batch: b,
        height: h,
        width: w,
    };
    let p = to_f64(graph.value(probs));
    let loss = segmentation_loss_with_grad(&p, &to_f64(masks), dims, cfg.alpha, cfg.dice_smooth)?;
    if !loss.ce.is_finite() {
        return Err(non_finite("seg_ce"));
    }
    if !loss.dice.is_finite() {
        return Err(non_finite("seg_dice"));
    }
    let shape = graph.value(probs).shape().to_vec();
    let node = graph.loss(loss.total, vec![(probs, to_tensor(&shape, loss.grad))]);
    Ok((node, loss.ce, loss.dice))
}

/// One discriminator update on detached `(target, source)` features.
/// Returns the pre-update loss.
pub fn discriminator_step(
    d: &mut Discriminator,
    opt: &mut Adam,
    target: &Tensor,
    source: &Tensor,
    lr: f32,
) -> Result<f64> {
    let mut graph = Graph::new();
    let t = graph.constant(target.clone());
    let s = graph.constant(source.clone());
    let (dt, updates) = d.forward_graph(&mut graph, t, Mode::Train, true)?;
    apply_updates(&mut d.params, updates);
    let (ds, updates) = d.forward_graph(&mut graph, s, Mode::Train, true)?;
    apply_updates(&mut d.params, updates);
    let (value, gt, gs) = lsgan_d_loss_with_grad(&to_f64(graph.value(dt)), &to_f64(graph.value(ds)))?;
    if !value.is_finite() {
        return Err(non_finite("d_loss"));
    }
    let (st, ss) = (graph.value(dt).shape().to_vec(), graph.value(ds).shape().to_vec());
    let root = graph.loss(value, vec![(dt, to_tensor(&st, gt)), (ds, to_tensor(&ss, gs))]);
    let grads = graph.backward(root).take_for_set(&d.params);
    opt.update(&mut d.params, &grads, lr);
    Ok(value)
}

/// Generator-side adversarial term through a frozen discriminator.
fn adversarial_node(
    graph: &mut Graph,
    d: &Discriminator,
    target: Var,
    source: Var,
    symmetric: bool,
    name: &str,
) -> Result<(Var, f64)> {
    // Discriminator running statistics are not advanced by generator passes.
    let (dt, _) = d.forward_graph(graph, target, Mode::Train, false)?;
    let (value, inputs) = if symmetric {
        let (ds, _) = d.forward_graph(graph, source, Mode::Train, false)?;
        let (v, gt, gs) =
            lsgan_g_adv_symmetric_with_grad(&to_f64(graph.value(dt)), &to_f64(graph.value(ds)))?;
        let (st, ss) = (graph.value(dt).shape().to_vec(), graph.value(ds).shape().to_vec());
        (v, vec![(dt, to_tensor(&st, gt)), (ds, to_tensor(&ss, gs))])
    } else {
        let (v, gt) = lsgan_g_adv_loss_with_grad(&to_f64(graph.value(dt)))?;
        let st = graph.value(dt).shape().to_vec();
        (v, vec![(dt, to_tensor(&st, gt))])
    };
    if !value.is_finite() {
        return Err(non_finite(name));
    }
    Ok((graph.loss(value, inputs), value))
}

fn generator_forward(
    state: &mut TrainState,
    graph: &mut Graph,
    batch: &DomainBatch,
) -> Result<SegVars> {
    let x = graph.constant(batch.images.clone());
    let (vars, updates) = state
        .nets
        .generator
        .forward_graph(graph, x, Mode::Train, true, batch.domain)?;
    apply_updates(&mut state.nets.generator.params, updates);
    Ok(vars)
}

/// Alternating update: discriminators first (on detached generator outputs),
/// then the generator through frozen discriminators. The learning rate is
/// `lr_at_epoch(state.epoch)` for all three networks.
pub fn train_step(
    state: &mut TrainState,
    source: &DomainBatch,
    target: &DomainBatch,
    cfg: &ExperimentConfig,
) -> Result<LossBreakdown> {
    check_batches(source, target, cfg)?;
    let lr = crate::config::lr_at_epoch(cfg, state.epoch)? as f32;
    let (use_img, use_feat) = (cfg.variant.uses_image_level(), cfg.variant.uses_feature_level());
    let (lambda_img, lambda_feat) = cfg.effective_lambdas();

    let mut graph = Graph::new();
    let sv = generator_forward(state, &mut graph, source)?;
    let tv = generator_forward(state, &mut graph, target)?;
    let masks = source.masks.as_ref().expect("checked");
    let (seg, ce, dice) = segmentation_node(&mut graph, sv.logits, masks, cfg)?;

    let mut terms = LossTerms {
        seg_ce: ce,
        seg_dice: dice,
        ..LossTerms::default()
    };
    if use_img {
        let (p_t, p_s) = (graph.value(tv.p).clone(), graph.value(sv.p).clone());
        terms.d_img = discriminator_step(&mut state.nets.d_img, &mut state.opt_d_img, &p_t, &p_s, lr)
            .map_err(|e| rename(e, "d_img"))?;
    }
    if use_feat {
        let (f_t, f_s) = (graph.value(tv.f).clone(), graph.value(sv.f).clone());
        terms.d_feat =
            discriminator_step(&mut state.nets.d_feat, &mut state.opt_d_feat, &f_t, &f_s, lr)
                .map_err(|e| rename(e, "d_feat"))?;
    }

    let mut weighted = vec![(seg, 1.0f32)];
    if use_img {
        let (node, v) = adversarial_node(&mut graph, &state.nets.d_img, tv.p, sv.p, cfg.adv_symmetric, "adv_img_g")?;
        terms.adv_img_g = v;
        weighted.push((node, lambda_img as f32));
    }
    if use_feat {
        let (node, v) = adversarial_node(&mut graph, &state.nets.d_feat, tv.f, sv.f, cfg.adv_symmetric, "adv_feat_g")?;
        terms.adv_feat_g = v;
        weighted.push((node, lambda_feat as f32));
    }
    let breakdown = total_generator_objective(&terms, cfg);
    if let Some(name) = breakdown.first_non_finite() {
        return Err(non_finite(name));
    }
    let root = graph.weighted_sum(&weighted);
    let grads = graph.backward(root).take_for_set(&state.nets.generator.params);
    state
        .opt_g
        .update(&mut state.nets.generator.params, &grads, lr);
    state.global_step += 1;
    Ok(breakdown)
}

fn rename(e: Error, name: &str) -> Error {
    match e {
        Error::NonFinite(_) => non_finite(name),
        other => other,
    }
}

/// Generator update on the segmentation loss alone; the reference that the
/// `NA` variant must reduce to.
pub fn segmentation_step(
    state: &mut TrainState,
    source: &DomainBatch,
    cfg: &ExperimentConfig,
) -> Result<LossBreakdown> {
    let lr = crate::config::lr_at_epoch(cfg, state.epoch)? as f32;
    let masks = source
        .masks
        .as_ref()
        .ok_or_else(|| Error::Precondition("source batch has no masks".into()))?;
    let mut graph = Graph::new();
    let sv = generator_forward(state, &mut graph, source)?;
    let (seg, ce, dice) = segmentation_node(&mut graph, sv.logits, masks, cfg)?;
    let root = graph.weighted_sum(&[(seg, 1.0)]);
    let grads = graph.backward(root).take_for_set(&state.nets.generator.params);
    state
        .opt_g
        .update(&mut state.nets.generator.params, &grads, lr);
    state.global_step += 1;
    Ok(total_generator_objective(
        &LossTerms {
            seg_ce: ce,
            seg_dice: dice,
            ..LossTerms::default()
        },
        cfg,
    ))
}
