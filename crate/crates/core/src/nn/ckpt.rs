//! Network checkpoint serialization ("OMGRL-NET v1").
//!
//! A network (and optionally its Adam moments) is stored as key=value lines
//! with hex-encoded fp64 arrays in layer order. The same block can be
//! embedded under a key prefix inside a larger checkpoint document.

use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::KvDoc;

use super::{Activation, AdamConfig, AdamState, DenseNet, LogVarBounds, OutputHead};

pub const NET_MAGIC: &str = "OMGRL-NET v1";

pub fn write_net(doc: &mut KvDoc, prefix: &str, net: &DenseNet) {
    let sizes: Vec<String> = net.layer_sizes().iter().map(|s| s.to_string()).collect();
    doc.set(&format!("{prefix}layer_sizes"), sizes.join(","));
    doc.set(&format!("{prefix}hidden"), net.hidden_activation().name());
    doc.set(&format!("{prefix}head"), net.output_head().name());
    if let OutputHead::GaussianHead(b) = net.output_head() {
        doc.set_f64(&format!("{prefix}head.logvar_min"), b.min);
        doc.set_f64(&format!("{prefix}head.logvar_max"), b.max);
    }
    for l in 0..net.num_layers() {
        doc.set_vec(&format!("{prefix}w{l}"), net.weights(l));
        doc.set_vec(&format!("{prefix}b{l}"), net.biases(l));
    }
}

pub fn read_net(doc: &KvDoc, prefix: &str) -> Result<DenseNet> {
    let sizes: Vec<usize> = doc
        .get(&format!("{prefix}layer_sizes"))?
        .split(',')
        .map(|s| s.parse().map_err(|e| Error::Parse(format!("bad layer size: {e}"))))
        .collect::<Result<_>>()?;
    let hidden = Activation::from_name(doc.get(&format!("{prefix}hidden"))?)?;
    let head = match doc.get(&format!("{prefix}head"))? {
        "linear" => OutputHead::Linear,
        "softmax" => OutputHead::Softmax,
        "gaussian_head" => OutputHead::GaussianHead(LogVarBounds {
            min: doc.get_f64(&format!("{prefix}head.logvar_min"))?,
            max: doc.get_f64(&format!("{prefix}head.logvar_max"))?,
        }),
        other => return Err(Error::Parse(format!("unknown head {other:?}"))),
    };
    let mut net = DenseNet::zeros(&sizes, hidden, head)?;
    for l in 0..net.num_layers() {
        let w = doc.get_vec(&format!("{prefix}w{l}"))?;
        let b = doc.get_vec(&format!("{prefix}b{l}"))?;
        if w.len() != net.weights(l).len() || b.len() != net.biases(l).len() {
            return Err(Error::Parse(format!("checkpoint layer {l} shape mismatch")));
        }
        net.weights_mut(l).copy_from_slice(&w);
        net.biases_mut(l).copy_from_slice(&b);
    }
    Ok(net)
}

pub fn write_adam(doc: &mut KvDoc, prefix: &str, state: &AdamState) {
    doc.set(&format!("{prefix}adam.step"), state.step);
    doc.set_f64(&format!("{prefix}adam.lr"), state.config.lr);
    doc.set_f64(&format!("{prefix}adam.beta1"), state.config.beta1);
    doc.set_f64(&format!("{prefix}adam.beta2"), state.config.beta2);
    doc.set_f64(&format!("{prefix}adam.eps"), state.config.eps);
    for l in 0..state.m_w.len() {
        doc.set_vec(&format!("{prefix}adam.mw{l}"), &state.m_w[l]);
        doc.set_vec(&format!("{prefix}adam.vw{l}"), &state.v_w[l]);
        doc.set_vec(&format!("{prefix}adam.mb{l}"), &state.m_b[l]);
        doc.set_vec(&format!("{prefix}adam.vb{l}"), &state.v_b[l]);
    }
}

pub fn read_adam(doc: &KvDoc, prefix: &str, net: &DenseNet) -> Result<AdamState> {
    let config = AdamConfig {
        lr: doc.get_f64(&format!("{prefix}adam.lr"))?,
        beta1: doc.get_f64(&format!("{prefix}adam.beta1"))?,
        beta2: doc.get_f64(&format!("{prefix}adam.beta2"))?,
        eps: doc.get_f64(&format!("{prefix}adam.eps"))?,
    };
    let mut state = AdamState::new(net, config);
    state.step = doc.get_u64(&format!("{prefix}adam.step"))?;
    for l in 0..net.num_layers() {
        state.m_w[l] = doc.get_vec(&format!("{prefix}adam.mw{l}"))?;
        state.v_w[l] = doc.get_vec(&format!("{prefix}adam.vw{l}"))?;
        state.m_b[l] = doc.get_vec(&format!("{prefix}adam.mb{l}"))?;
        state.v_b[l] = doc.get_vec(&format!("{prefix}adam.vb{l}"))?;
        if state.m_w[l].len() != net.weights(l).len() {
            return Err(Error::Parse(format!("adam moments shape mismatch at layer {l}")));
        }
    }
    Ok(state)
}

pub fn save_net_file(path: &Path, net: &DenseNet, adam: Option<&AdamState>) -> Result<()> {
    let mut doc = KvDoc::new(NET_MAGIC);
    write_net(&mut doc, "", net);
    if let Some(state) = adam {
        doc.set("adam.present", 1);
        write_adam(&mut doc, "", state);
    }
    doc.write_file(path)
}

pub fn load_net_file(path: &Path) -> Result<(DenseNet, Option<AdamState>)> {
    let doc = KvDoc::read_file(path, Some(NET_MAGIC))?;
    let net = read_net(&doc, "")?;
    let adam = if doc.get_opt("adam.present").is_some() {
        Some(read_adam(&doc, "", &net)?)
    } else {
        None
    };
    Ok((net, adam))
}
