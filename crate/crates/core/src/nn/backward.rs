use super::{Gradients, MlpModel, Trace};
use crate::datagen::ViewPair;
use crate::error::{invalid, Error, Result};
use crate::objective::{joint_loss, LossReport, Sign};
use crate::prob::{log_softmax, softmax};

/// Result of differentiating the joint loss over one batch.
#[derive(Debug, Clone)]
pub struct Backward {
    pub grads: Gradients,
    pub loss: LossReport,
}

/// Exact gradients of `(1 - alpha) * L_c + alpha * L_o` for a batch of view
/// pairs, where `L_c` is the two-view soft-target cross-entropy and `L_o` the
/// signed symmetric KL between the views. Both averages run over the batch.
///
/// `targets[i]` supervises both views of sample `i`.
pub fn backward(
    model: &MlpModel,
    views: &[ViewPair],
    targets: &[crate::ProbDist],
    signs: &[Sign],
    alpha: f64,
) -> Result<Backward> {
    let n = views.len();
    if n == 0 {
        return Err(invalid("empty batch"));
    }
    if targets.len() != n || signs.len() != n {
        return Err(invalid(format!(
            "batch of {n} view pairs has {} targets and {} signs",
            targets.len(),
            signs.len()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid(format!("alpha {alpha} out of [0,1]")));
    }
    let classes = model.class_count();
    if let Some(t) = targets.iter().find(|t| t.len() != classes) {
        return Err(invalid(format!("target has {} classes, model has {classes}", t.len())));
    }

    let scale = 1.0 / n as f64;
    let mut grads = Gradients::zeros_like(model);
    let mut sum_c = 0.0;
    let mut sum_o = 0.0;

    for ((pair, target), sign) in views.iter().zip(targets).zip(signs) {
        let ta = model.trace(&pair.v)?;
        let tb = model.trace(&pair.v_prime)?;
        let lp = log_softmax(ta.logits());
        let lq = log_softmax(tb.logits());
        let p = softmax(ta.logits());
        let q = softmax(tb.logits());
        let y = target.as_slice();

        let ce_p: f64 = -y.iter().zip(&lp).map(|(t, l)| t * l).sum::<f64>();
        let ce_q: f64 = -y.iter().zip(&lq).map(|(t, l)| t * l).sum::<f64>();
        let kl_pq: f64 = p.iter().zip(lp.iter().zip(&lq)).map(|(a, (la, lb))| a * (la - lb)).sum();
        let kl_qp: f64 = q.iter().zip(lq.iter().zip(&lp)).map(|(b, (lb, la))| b * (lb - la)).sum();
        let rho = sign.value();
        sum_c += ce_p + ce_q;
        sum_o += rho * (kl_pq + kl_qp);

        // d/dz of CE is p - y; d/dz of KL(p||q) + KL(q||p) w.r.t. the logits of
        // p is p * (ln p - ln q - KL(p||q)) + p - q.
        let wc = (1.0 - alpha) * scale;
        let wo = alpha * rho * scale;
        let dz_a: Vec<f64> =
            (0..classes).map(|k| wc * (p[k] - y[k]) + wo * (p[k] * (lp[k] - lq[k] - kl_pq) + p[k] - q[k])).collect();
        let dz_b: Vec<f64> =
            (0..classes).map(|k| wc * (q[k] - y[k]) + wo * (q[k] * (lq[k] - lp[k] - kl_qp) + q[k] - p[k])).collect();

        accumulate(model, &ta, dz_a, &mut grads);
        accumulate(model, &tb, dz_b, &mut grads);
    }

    for l in (0..model.num_layers()).rev() {
        let bad = grads.weights[l].iter().chain(&grads.biases[l]).any(|g| !g.is_finite());
        if bad {
            return Err(Error::NumericFailure { layer: l, detail: "non-finite gradient".into() });
        }
    }

    let loss = joint_loss(sum_c * scale, sum_o * scale, alpha, n)?;
    if !loss.l_total.is_finite() {
        return Err(Error::NumericFailure {
            layer: model.num_layers() - 1,
            detail: format!("loss evaluated to {}", loss.l_total),
        });
    }
    Ok(Backward { grads, loss })
}

/// Backpropagates the logit gradient `dz` of one forward pass into `grads`.
fn accumulate(model: &MlpModel, trace: &Trace, mut dz: Vec<f64>, grads: &mut Gradients) {
    for l in (0..model.num_layers()).rev() {
        let in_dim = model.layer_dims[l];
        let input = &trace.inputs[l];
        let gw = &mut grads.weights[l];
        for (o, d) in dz.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            let row = &mut gw[o * in_dim..(o + 1) * in_dim];
            for (g, a) in row.iter_mut().zip(input) {
                *g += d * a;
            }
        }
        for (g, d) in grads.biases[l].iter_mut().zip(&dz) {
            *g += d;
        }
        if l == 0 {
            break;
        }
        let w = &model.weights[l];
        let mut da = vec![0.0; in_dim];
        for (o, d) in dz.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            for (acc, wv) in da.iter_mut().zip(&w[o * in_dim..(o + 1) * in_dim]) {
                *acc += d * wv;
            }
        }
        let pre = &trace.pre[l - 1];
        for (a, z) in da.iter_mut().zip(pre) {
            *a *= model.activation.derivative(*z);
        }
        dz = da;
    }
}
