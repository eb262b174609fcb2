//! Single-propagation bound-gap recursion: one nominal forward pass plus
//! one forward-shaped sweep carries a per-neuron half-gap estimate `v`
//! through the network, `v⁰ = ε·1`, `v^i = |W^i|·bracket(z^{i−1}, v^{i−1})`.
//! The robust logits `(z−v)∘y + (z+v)∘(1−y)` feed the training regularizer.

use crate::counter;
use crate::error::{Error, Result};
use crate::ibp::PerturbationSpec;
use crate::linear_bounds::{self, RelaxMode};
use crate::loss::{one_hot_index, Loss};
use crate::network::{Activation, Network};
use crate::tensor::Vector;

/// Below this, an unstable classification would divide by ~0 in the
/// FastLin bracket; such neurons are classified by the sign of z instead.
/// The backward pass keys off the same classification.
pub const V_GUARD: f64 = 1e-12;

/// Nominal pre-activations and half-gap estimates, level 0 = input.
#[derive(Debug, Clone)]
pub struct VTrace {
    pub input: Vector,
    /// Pre-activations of layers 1..n.
    pub z_nom: Vec<Vector>,
    /// v[0] = ε·1 over the input; v[i] pairs with z_nom[i-1].
    pub v: Vec<Vector>,
}

impl VTrace {
    pub fn logits(&self) -> &Vector {
        self.z_nom.last().expect("non-empty network")
    }

    pub fn output_v(&self) -> &Vector {
        self.v.last().expect("non-empty network")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeuronStatus {
    StablePos,
    StableNeg,
    Unstable,
}

/// Classify a neuron from its approximate interval [z−v, z+v]. Boundary
/// neurons (z±v exactly 0) are stable: their linearization is one-sided
/// and exact.
pub fn classify(z: f64, v: f64, variant: RelaxMode) -> NeuronStatus {
    if variant == RelaxMode::FastLin && v < V_GUARD {
        return if z >= 0.0 {
            NeuronStatus::StablePos
        } else {
            NeuronStatus::StableNeg
        };
    }
    if z - v >= 0.0 {
        NeuronStatus::StablePos
    } else if z + v <= 0.0 {
        NeuronStatus::StableNeg
    } else {
        NeuronStatus::Unstable
    }
}

/// Per-neuron factor the next layer's |W| multiplies.
pub fn bracket(z_nom: f64, v: f64, variant: RelaxMode) -> Result<f64> {
    if v < 0.0 {
        return Err(Error::InvalidInterval {
            context: "bracket",
            lower: z_nom - v,
            upper: z_nom + v,
        });
    }
    Ok(match classify(z_nom, v, variant) {
        NeuronStatus::StablePos => v,
        NeuronStatus::StableNeg => 0.0,
        NeuronStatus::Unstable => match variant {
            RelaxMode::FastLin => 0.75 * v + 0.5 * z_nom - z_nom * z_nom / (4.0 * v),
            RelaxMode::Zero => 0.5 * (z_nom + v),
        },
    })
}

/// Bracket an entire layer input. Identity activations pass v through.
fn bracket_layer(
    activation: Activation,
    z_prev: &Vector,
    v_prev: &Vector,
    variant: RelaxMode,
) -> Result<Vector> {
    match activation {
        Activation::Identity => Ok(v_prev.clone()),
        Activation::Relu => {
            let mut out = Vector::zeros(v_prev.len());
            for j in 0..v_prev.len() {
                out[j] = bracket(z_prev[j], v_prev[j], variant)?;
            }
            Ok(out)
        }
    }
}

/// Nominal forward plus the v-sweep: one extra forward-shaped pass, one
/// |W| product per layer.
pub fn propagate_v(
    net: &Network,
    x_nom: &Vector,
    pert: &PerturbationSpec,
    variant: RelaxMode,
) -> Result<VTrace> {
    let trace = net.forward(x_nom)?;
    let mut v: Vec<Vector> = Vec::with_capacity(net.n_layers() + 1);
    v.push(Vector::filled(net.input_dim(), pert.epsilon()));

    counter::record_fwd_pass();
    for (i, layer) in net.layers().iter().enumerate() {
        let z_prev = if i == 0 {
            &trace.input
        } else {
            &trace.pre_activations[i - 1]
        };
        let br = bracket_layer(layer.activation, z_prev, &v[i], variant)?;
        v.push(layer.weight().abs_matvec(&br));
        counter::record_products(1);
    }

    Ok(VTrace {
        input: trace.input,
        z_nom: trace.pre_activations,
        v,
    })
}

/// `(z−v)∘y + (z+v)∘(1−y)`: worst-case logits under the gap estimate —
/// the true class lowered, every other class raised.
pub fn robust_logits(trace: &VTrace, y: &Vector) -> Result<Vector> {
    one_hot_index(y)?;
    let z = trace.logits();
    let v = trace.output_v();
    if y.len() != z.len() {
        return Err(Error::Shape {
            op: "robust_logits",
            expected: format!("{} classes", z.len()),
            got: format!("{}", y.len()),
        });
    }
    let mut r = Vector::zeros(z.len());
    for j in 0..z.len() {
        r[j] = z[j] + v[j] * (1.0 - 2.0 * y[j]);
    }
    Ok(r)
}

/// `loss(robust logits) − loss(nominal logits)`; exactly 0 at ε = 0.
pub fn singleprop_regularizer(
    net: &Network,
    x_nom: &Vector,
    pert: &PerturbationSpec,
    y: &Vector,
    variant: RelaxMode,
    loss: Loss,
) -> Result<f64> {
    let trace = propagate_v(net, x_nom, pert, variant)?;
    let r = robust_logits(&trace, y)?;
    Ok(loss.value(&r, y) - loss.value(trace.logits(), y))
}

/// Per-layer discrepancy between the single-propagation estimate and the
/// matching linear-relaxation verifier.
#[derive(Debug, Clone)]
pub struct ApproxReport {
    /// |v^i − ½(z_U − z_L)| per layer 1..n.
    pub v_abs_err: Vec<Vector>,
    /// |z_nom^i − ½(z_U + z_L)| per layer 1..n.
    pub midpoint_offset: Vec<Vector>,
}

impl ApproxReport {
    pub fn max_v_err(&self) -> f64 {
        self.v_abs_err
            .iter()
            .flat_map(|l| l.iter())
            .copied()
            .fold(0.0, f64::max)
    }

    pub fn max_midpoint_offset(&self) -> f64 {
        self.midpoint_offset
            .iter()
            .flat_map(|l| l.iter())
            .copied()
            .fold(0.0, f64::max)
    }
}

/// Compare the v-sweep against the verifier it approximates, layer by
/// layer. The verifier's midpoint is computed cancellation-free, so on a
/// one-layer linear net both reported quantities are exactly zero.
pub fn approx_vs_verifier(
    net: &Network,
    x_nom: &Vector,
    pert: &PerturbationSpec,
    variant: RelaxMode,
) -> Result<ApproxReport> {
    let trace = propagate_v(net, x_nom, pert, variant)?;
    let verification = linear_bounds::linear_verify(net, x_nom, pert, variant, 0)?;

    let mut v_abs_err = Vec::with_capacity(net.n_layers());
    let mut midpoint_offset = Vec::with_capacity(net.n_layers());
    for i in 0..net.n_layers() {
        let cb = &verification.layers[i];
        let z = &trace.z_nom[i];
        let v = &trace.v[i + 1];
        let mut verr = Vector::zeros(z.len());
        let mut moff = Vector::zeros(z.len());
        for j in 0..z.len() {
            let half_gap = (cb.upper[j] - cb.lower[j]) / 2.0;
            verr[j] = (v[j] - half_gap).abs();
            moff[j] = (z[j] - cb.midpoint[j]).abs();
        }
        v_abs_err.push(verr);
        midpoint_offset.push(moff);
    }
    Ok(ApproxReport {
        v_abs_err,
        midpoint_offset,
    })
}
