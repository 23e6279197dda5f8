//! Finite-difference self-verification of analytic gradients.

use crate::error::Result;

use super::loss::{gaussian_nll, nll_of_probs, squared_error};
use super::{DenseNet, OutputHead};

/// Loss attached to a network output for gradient checking.
#[derive(Debug, Clone)]
pub enum LossHead {
    /// ½‖y − target‖² on any head.
    SquaredError { target: Vec<f64> },
    /// −ln p[class] on a softmax head.
    SoftmaxNll { class: usize },
    /// Diagonal-Gaussian NLL on a gaussian head (target over the mean half).
    GaussianNll { target: Vec<f64> },
}

impl LossHead {
    /// Loss value and dLoss/dOutput for a post-head output vector.
    pub fn loss_and_upstream(&self, output: &[f64]) -> Result<(f64, Vec<f64>)> {
        match self {
            LossHead::SquaredError { target } => squared_error(output, target),
            LossHead::SoftmaxNll { class } => nll_of_probs(output, *class),
            LossHead::GaussianNll { target } => {
                let half = output.len() / 2;
                let (loss, d_mean, d_lv) = gaussian_nll(&output[..half], &output[half..], target)?;
                let mut upstream = d_mean;
                upstream.extend_from_slice(&d_lv);
                Ok((loss, upstream))
            }
        }
    }
}

const FD_STEP: f64 = 1e-6;

/// Compare analytic parameter gradients against central finite differences.
///
/// Perturbs every weight and bias by ±1e-6 and returns the worst relative
/// error, measured against `max(|analytic|, |numeric|, 1e-4)` so that
/// near-zero gradients do not inflate the ratio.
pub fn grad_check(net: &DenseNet, head: &LossHead, input: &[f64]) -> Result<f64> {
    debug_assert!(
        !matches!(
            (net.output_head(), head),
            (OutputHead::Softmax, LossHead::GaussianNll { .. })
                | (OutputHead::Linear, LossHead::SoftmaxNll { .. })
        ),
        "loss head incompatible with output head"
    );
    let (output, cache) = net.forward(input)?;
    let (_, upstream) = head.loss_and_upstream(&output)?;
    let analytic = net.backward(&cache, &upstream)?;

    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for layer in 0..net.num_layers() {
        for idx in 0..net.weights(layer).len() {
            let a = analytic.d_w[layer][idx];
            let n = fd_param(&mut probe, head, input, layer, idx, true)?;
            worst = worst.max(rel_err(a, n));
        }
        for idx in 0..net.biases(layer).len() {
            let a = analytic.d_b[layer][idx];
            let n = fd_param(&mut probe, head, input, layer, idx, false)?;
            worst = worst.max(rel_err(a, n));
        }
    }
    Ok(worst)
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

fn fd_param(
    net: &mut DenseNet,
    head: &LossHead,
    input: &[f64],
    layer: usize,
    idx: usize,
    is_weight: bool,
) -> Result<f64> {
    let read = |net: &mut DenseNet| -> f64 {
        if is_weight {
            net.weights(layer)[idx]
        } else {
            net.biases(layer)[idx]
        }
    };
    let write = |net: &mut DenseNet, v: f64| {
        if is_weight {
            net.weights_mut(layer)[idx] = v;
        } else {
            net.biases_mut(layer)[idx] = v;
        }
    };
    let orig = read(net);
    write(net, orig + FD_STEP);
    let (out, _) = net.forward(input)?;
    let (loss_plus, _) = head.loss_and_upstream(&out)?;
    write(net, orig - FD_STEP);
    let (out, _) = net.forward(input)?;
    let (loss_minus, _) = head.loss_and_upstream(&out)?;
    write(net, orig);
    Ok((loss_plus - loss_minus) / (2.0 * FD_STEP))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, DenseNet, LogVarBounds, OutputHead};
    use crate::rng::{derive_stream, seeded_rng};
    use rand::Rng;

    fn random_input<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
        (0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect()
    }

    #[test]
    fn random_nets_pass_grad_check_on_all_heads() {
        for seed in 0..8u64 {
            let mut rng = derive_stream(99, seed);
            let act = if seed % 2 == 0 { Activation::Relu } else { Activation::Tanh };

            let lin = DenseNet::new(&[4, 10, 3], act, OutputHead::Linear, &mut rng).unwrap();
            let x = random_input(4, &mut rng);
            let t = random_input(3, &mut rng);
            let e = grad_check(&lin, &LossHead::SquaredError { target: t }, &x).unwrap();
            assert!(e <= 1e-4, "linear head: {e}");

            let sm = DenseNet::new(&[4, 10, 5], act, OutputHead::Softmax, &mut rng).unwrap();
            let x = random_input(4, &mut rng);
            let e = grad_check(&sm, &LossHead::SoftmaxNll { class: 2 }, &x).unwrap();
            assert!(e <= 1e-4, "softmax head: {e}");

            let gh = DenseNet::new(
                &[4, 10, 6],
                act,
                OutputHead::GaussianHead(LogVarBounds::default()),
                &mut rng,
            )
            .unwrap();
            let x = random_input(4, &mut rng);
            let t = random_input(3, &mut rng);
            let e = grad_check(&gh, &LossHead::GaussianNll { target: t }, &x).unwrap();
            assert!(e <= 1e-4, "gaussian head: {e}");
        }
    }

    #[test]
    fn linear_layer_quadratic_loss_is_near_exact() {
        let mut rng = seeded_rng(3);
        let net = DenseNet::new(&[3, 2], Activation::Relu, OutputHead::Linear, &mut rng).unwrap();
        let e = grad_check(
            &net,
            &LossHead::SquaredError { target: vec![0.5, -0.25] },
            &[0.9, -0.4, 0.3],
        )
        .unwrap();
        assert!(e <= 1e-8, "error {e}");
    }

    #[test]
    fn all_zero_net_and_input_is_clean() {
        let net = DenseNet::zeros(&[3, 4, 2], Activation::Relu, OutputHead::Linear).unwrap();
        let e = grad_check(
            &net,
            &LossHead::SquaredError { target: vec![0.0, 0.0] },
            &[0.0, 0.0, 0.0],
        )
        .unwrap();
        assert!(e.is_finite());
        assert!(e <= 1e-8, "error {e}");
    }
}
