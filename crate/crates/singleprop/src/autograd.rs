//! Reverse-mode gradients of the robust objective
//! `L(z_nom, y) + λ·(L(robust, y) − L(z_nom, y))` for every training
//! variant, plus a central-finite-difference oracle.
//!
//! Differentiation freezes the piecewise structure at its forward values:
//! neuron statuses, ReLU on/off patterns, and weight signs (d|W|/dW =
//! sign(W), sign(0) = 0) are constants of the pass. The finite-difference
//! checker compares branch fingerprints at θ±h and skips parameters whose
//! perturbation crosses a boundary.
//!
//! The product counter counts one W-shaped propagation product per layer
//! per sweep; rank-1 parameter-gradient updates ride along with the sweep
//! rather than being counted separately.

use crate::counter;
use crate::error::{Error, Result};
use crate::ibp::{self, PerturbationSpec};
use crate::linear_bounds::RelaxMode;
use crate::loss::Loss;
use crate::network::{Activation, Network};
use crate::tensor::{Matrix, Vector};
use crate::vprop::{self, classify, NeuronStatus, VTrace};

/// Which objective the training step optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainVariant {
    Standard,
    Ibp,
    SinglePropFastLin,
    SinglePropZero,
}

impl TrainVariant {
    pub fn relax_mode(self) -> Option<RelaxMode> {
        match self {
            TrainVariant::SinglePropFastLin => Some(RelaxMode::FastLin),
            TrainVariant::SinglePropZero => Some(RelaxMode::Zero),
            _ => None,
        }
    }
}

/// Parameter-shaped gradients: conv layers hold kernel-shaped matrices
/// and per-channel bias vectors, dense layers mirror their weights.
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vector>,
}

impl GradientSet {
    pub fn zeros_like(net: &Network) -> Self {
        let mut weights = Vec::with_capacity(net.n_layers());
        let mut biases = Vec::with_capacity(net.n_layers());
        for layer in net.layers() {
            let w = layer.param_weight();
            weights.push(Matrix::zeros(w.rows(), w.cols()));
            biases.push(Vector::zeros(layer.param_bias().len()));
        }
        GradientSet { weights, biases }
    }

    pub fn add(&mut self, other: &GradientSet) {
        for (a, b) in self.weights.iter_mut().zip(other.weights.iter()) {
            for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *x += y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(other.biases.iter()) {
            for (x, y) in a.as_mut_slice().iter_mut().zip(b.iter()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            for x in w.as_mut_slice() {
                *x *= s;
            }
        }
        for b in &mut self.biases {
            for x in b.as_mut_slice() {
                *x *= s;
            }
        }
    }

    /// Index of the first layer holding a non-finite entry, if any.
    fn first_non_finite(&self) -> Option<usize> {
        for (i, (w, b)) in self.weights.iter().zip(self.biases.iter()).enumerate() {
            if !w.all_finite() || !b.all_finite() {
                return Some(i);
            }
        }
        None
    }
}

/// Lowered-space accumulator; conv layers are projected back to kernel
/// shape only once the sweeps finish.
struct LoweredGrads {
    w: Vec<Matrix>,
    b: Vec<Vector>,
}

impl LoweredGrads {
    fn zeros_like(net: &Network) -> Self {
        let mut w = Vec::with_capacity(net.n_layers());
        let mut b = Vec::with_capacity(net.n_layers());
        for layer in net.layers() {
            w.push(Matrix::zeros(layer.out_dim(), layer.in_dim()));
            b.push(Vector::zeros(layer.out_dim()));
        }
        LoweredGrads { w, b }
    }

    fn finalize(self, net: &Network) -> Result<GradientSet> {
        let mut weights = Vec::with_capacity(net.n_layers());
        let mut biases = Vec::with_capacity(net.n_layers());
        for ((layer, w), b) in net.layers().iter().zip(self.w).zip(self.b) {
            let (pw, pb) = layer.project_lowered_grads(&w, &b);
            weights.push(pw);
            biases.push(pb);
        }
        Ok(GradientSet { weights, biases })
    }
}

/// `acc += g ⊗ h`, skipping zero adjoint rows.
fn outer_acc(acc: &mut Matrix, g: &Vector, h: &Vector) {
    let cols = acc.cols();
    let data = acc.as_mut_slice();
    for r in 0..g.len() {
        let gr = g[r];
        if gr == 0.0 {
            continue;
        }
        for (a, hv) in data[r * cols..(r + 1) * cols].iter_mut().zip(h.iter()) {
            *a += gr * hv;
        }
    }
}

/// The objective and its parts: `total = nominal + λ·regularizer`.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub total: f64,
    pub nominal: f64,
    pub regularizer: f64,
}

impl LossBreakdown {
    fn plain(nominal: f64) -> Self {
        LossBreakdown {
            total: nominal,
            nominal,
            regularizer: 0.0,
        }
    }

    fn with_regularizer(nominal: f64, robust: f64, lambda: f64) -> Self {
        let regularizer = robust - nominal;
        LossBreakdown {
            total: nominal + lambda * regularizer,
            nominal,
            regularizer,
        }
    }
}

/// Robust objective value only — one evaluation, no gradients.
pub fn robust_loss(
    net: &Network,
    x_nom: &Vector,
    pert: &PerturbationSpec,
    y: &Vector,
    variant: TrainVariant,
    lambda_weight: f64,
    loss: Loss,
    clip_input: bool,
) -> Result<f64> {
    Ok(robust_loss_parts(net, x_nom, pert, y, variant, lambda_weight, loss, clip_input)?.total)
}

/// Objective with its nominal/regularizer decomposition, no gradients.
#[allow(clippy::too_many_arguments)]
pub fn robust_loss_parts(
    net: &Network,
    x_nom: &Vector,
    pert: &PerturbationSpec,
    y: &Vector,
    variant: TrainVariant,
    lambda_weight: f64,
    loss: Loss,
    clip_input: bool,
) -> Result<LossBreakdown> {
    Ok(eval_with_fingerprint(net, x_nom, pert, y, variant, lambda_weight, loss, clip_input, false)?.0)
}

/// Evaluate the objective and (optionally) serialize the branch pattern
/// the evaluation committed to: neuron statuses, ReLU on/off bits, and
/// weight signs, in fixed layer order.
#[allow(clippy::too_many_arguments)]
fn eval_with_fingerprint(
    net: &Network,
    x_nom: &Vector,
    pert: &PerturbationSpec,
    y: &Vector,
    variant: TrainVariant,
    lambda_weight: f64,
    loss: Loss,
    clip_input: bool,
    want_fingerprint: bool,
) -> Result<(LossBreakdown, Vec<u8>)> {
    let mut fp = Vec::new();
    let push_signs = |fp: &mut Vec<u8>| {
        if want_fingerprint {
            for layer in net.layers() {
                fp.extend(
                    layer
                        .weight()
                        .as_slice()
                        .iter()
                        .map(|&w| (w > 0.0) as u8 | (((w < 0.0) as u8) << 1)),
                );
            }
        }
    };

    match variant {
        TrainVariant::Standard => {
            let trace = net.forward(x_nom)?;
            if want_fingerprint {
                push_relu_bits(net, &trace.pre_activations, &mut fp);
            }
            Ok((LossBreakdown::plain(loss.value(trace.logits(), y)), fp))
        }
        TrainVariant::Ibp => {
            let trace = net.forward(x_nom)?;
            let bounds = ibp::ibp_propagate(net, x_nom, pert, clip_input)?;
            let worst = ibp::ibp_worst_case_logits(&bounds, y)?;
            let l_nom = loss.value(trace.logits(), y);
            let l_worst = loss.value(&worst, y);
            if want_fingerprint {
                push_signs(&mut fp);
                push_relu_bits(net, &trace.pre_activations, &mut fp);
                push_relu_bits(net, &bounds.upper[1..], &mut fp);
                push_relu_bits(net, &bounds.lower[1..], &mut fp);
            }
            Ok((LossBreakdown::with_regularizer(l_nom, l_worst, lambda_weight), fp))
        }
        TrainVariant::SinglePropFastLin | TrainVariant::SinglePropZero => {
            let mode = variant.relax_mode().expect("singleprop variant");
            let trace = vprop::propagate_v(net, x_nom, pert, mode)?;
            let robust = vprop::robust_logits(&trace, y)?;
            let l_nom = loss.value(trace.logits(), y);
            let l_rob = loss.value(&robust, y);
            if want_fingerprint {
                push_signs(&mut fp);
                push_relu_bits(net, &trace.z_nom, &mut fp);
                for (i, layer) in net.layers().iter().enumerate().skip(1) {
                    if layer.activation == Activation::Relu {
                        let z = &trace.z_nom[i - 1];
                        let v = &trace.v[i];
                        fp.extend((0..z.len()).map(|j| classify(z[j], v[j], mode) as u8));
                    }
                }
            }
            Ok((LossBreakdown::with_regularizer(l_nom, l_rob, lambda_weight), fp))
        }
    }
}

/// Push one on/off bit per neuron for every level feeding a ReLU layer.
fn push_relu_bits(net: &Network, levels: &[Vector], fp: &mut Vec<u8>) {
    for (i, layer) in net.layers().iter().enumerate().skip(1) {
        if layer.activation == Activation::Relu {
            fp.extend(levels[i - 1].iter().map(|&z| (z > 0.0) as u8));
        }
    }
}

/// Objective value and exact branch-frozen gradients for every parameter.
#[allow(clippy::too_many_arguments)]
pub fn backward_robust(
    net: &Network,
    x_nom: &Vector,
    pert: &PerturbationSpec,
    y: &Vector,
    variant: TrainVariant,
    lambda_weight: f64,
    loss: Loss,
    clip_input: bool,
) -> Result<(LossBreakdown, GradientSet)> {
    let lambda = lambda_weight;
    let mut acc = LoweredGrads::zeros_like(net);

    let value = match variant {
        TrainVariant::Standard => {
            let trace = net.forward(x_nom)?;
            let value = loss.value(trace.logits(), y);
            let g_top = loss.grad(trace.logits(), y);
            let inject = vec![None; net.n_layers().saturating_sub(1)];
            z_sweep(net, &trace.input, &trace.pre_activations, g_top, inject, &mut acc);
            LossBreakdown::plain(value)
        }
        TrainVariant::Ibp => {
            let trace = net.forward(x_nom)?;
            let bounds = ibp::ibp_propagate(net, x_nom, pert, clip_input)?;
            let worst = ibp::ibp_worst_case_logits(&bounds, y)?;
            let l_nom = loss.value(trace.logits(), y);
            let l_worst = loss.value(&worst, y);

            let g_w = loss.grad(&worst, y);
            let out = g_w.len();
            let mut gu = Vector::zeros(out);
            let mut gl = Vector::zeros(out);
            for j in 0..out {
                gu[j] = lambda * g_w[j] * (1.0 - y[j]);
                gl[j] = lambda * g_w[j] * y[j];
            }
            interval_sweep(net, &bounds, gu, gl, &mut acc);

            let g_nom = loss.grad(trace.logits(), y);
            let mut g_top = Vector::zeros(out);
            for j in 0..out {
                g_top[j] = (1.0 - lambda) * g_nom[j];
            }
            let inject = vec![None; net.n_layers().saturating_sub(1)];
            z_sweep(net, &trace.input, &trace.pre_activations, g_top, inject, &mut acc);
            LossBreakdown::with_regularizer(l_nom, l_worst, lambda)
        }
        TrainVariant::SinglePropFastLin | TrainVariant::SinglePropZero => {
            let mode = variant.relax_mode().expect("singleprop variant");
            let trace = vprop::propagate_v(net, x_nom, pert, mode)?;
            let robust = vprop::robust_logits(&trace, y)?;
            let l_nom = loss.value(trace.logits(), y);
            let l_rob = loss.value(&robust, y);

            let g_rob = loss.grad(&robust, y);
            let g_nom = loss.grad(trace.logits(), y);
            let out = g_nom.len();
            // g_nom + λ(g_rob − g_nom): collapses bitwise to g_nom when
            // the robust and nominal logits coincide (ε = 0, or λ = 0)
            let mut g_top = Vector::zeros(out);
            let mut gv_top = Vector::zeros(out);
            for j in 0..out {
                g_top[j] = g_nom[j] + lambda * (g_rob[j] - g_nom[j]);
                gv_top[j] = lambda * g_rob[j] * (1.0 - 2.0 * y[j]);
            }
            let inject = v_sweep(net, &trace, mode, gv_top, &mut acc)?;
            z_sweep(net, &trace.input, &trace.z_nom, g_top, inject, &mut acc);
            LossBreakdown::with_regularizer(l_nom, l_rob, lambda)
        }
    };

    if !value.total.is_finite() {
        return Err(Error::NumericFailure {
            context: "backward_robust objective",
            layer: net.n_layers(),
        });
    }
    let grads = acc.finalize(net)?;
    if let Some(layer) = grads.first_non_finite() {
        return Err(Error::NumericFailure {
            context: "backward_robust gradient",
            layer,
        });
    }
    Ok((value, grads))
}

/// Backward through the v-recursion. Consumes ∇v^n, accumulates weight
/// gradients through |W|, and returns the z-path injections
/// c^i = ∇br^i ∘ ∂br/∂z for the z-sweep to pick up at each level.
fn v_sweep(
    net: &Network,
    trace: &VTrace,
    mode: RelaxMode,
    mut gv: Vector,
    acc: &mut LoweredGrads,
) -> Result<Vec<Option<Vector>>> {
    let n = net.n_layers();
    let mut inject: Vec<Option<Vector>> = vec![None; n.saturating_sub(1)];

    counter::record_bwd_pass();
    for i in (1..=n).rev() {
        let layer = &net.layers()[i - 1];
        let v_prev = &trace.v[i - 1];
        let br = match layer.activation {
            Activation::Identity => v_prev.clone(),
            Activation::Relu => {
                let z_prev = &trace.z_nom[i - 2]; // first layer is Identity
                let mut b = Vector::zeros(v_prev.len());
                for j in 0..v_prev.len() {
                    b[j] = vprop::bracket(z_prev[j], v_prev[j], mode)?;
                }
                b
            }
        };

        // ∇W += sign(W) ∘ (∇v ⊗ br)
        {
            let cols = layer.in_dim();
            let w = layer.weight().as_slice();
            let wg = acc.w[i - 1].as_mut_slice();
            for r in 0..gv.len() {
                let gr = gv[r];
                if gr == 0.0 {
                    continue;
                }
                for c in 0..cols {
                    let sign = match w[r * cols + c] {
                        x if x > 0.0 => 1.0,
                        x if x < 0.0 => -1.0,
                        _ => 0.0,
                    };
                    wg[r * cols + c] += gr * sign * br[c];
                }
            }
        }
        counter::record_products(1);

        if i == 1 {
            break; // ∇v⁰ is not a parameter
        }
        let gbr = layer.weight().abs_matvec_transpose(&gv);
        match layer.activation {
            Activation::Identity => gv = gbr,
            Activation::Relu => {
                let z_prev = &trace.z_nom[i - 2];
                let mut gv_prev = Vector::zeros(gbr.len());
                let mut c_prev = Vector::zeros(gbr.len());
                for j in 0..gbr.len() {
                    let (dv, dz) = bracket_partials(z_prev[j], v_prev[j], mode);
                    gv_prev[j] = gbr[j] * dv;
                    c_prev[j] = gbr[j] * dz;
                }
                inject[i - 2] = Some(c_prev);
                gv = gv_prev;
            }
        }
    }
    Ok(inject)
}

/// (∂bracket/∂v, ∂bracket/∂z) on the branch the forward pass took.
fn bracket_partials(z: f64, v: f64, mode: RelaxMode) -> (f64, f64) {
    match classify(z, v, mode) {
        NeuronStatus::StablePos => (1.0, 0.0),
        NeuronStatus::StableNeg => (0.0, 0.0),
        NeuronStatus::Unstable => match mode {
            RelaxMode::FastLin => (0.75 + z * z / (4.0 * v * v), 0.5 - z / (2.0 * v)),
            RelaxMode::Zero => (0.5, 0.5),
        },
    }
}

/// Plain backprop over the nominal pre-activations, with optional
/// per-level additions from the v-path's direct z dependence.
fn z_sweep(
    net: &Network,
    input: &Vector,
    z: &[Vector],
    mut g: Vector,
    mut inject: Vec<Option<Vector>>,
    acc: &mut LoweredGrads,
) {
    counter::record_bwd_pass();
    for i in (0..net.n_layers()).rev() {
        let layer = &net.layers()[i];
        let h_prev = if i == 0 {
            input.clone()
        } else {
            layer.activation.apply_vec(&z[i - 1])
        };
        for (b, gr) in acc.b[i].as_mut_slice().iter_mut().zip(g.iter()) {
            *b += gr;
        }
        outer_acc(&mut acc.w[i], &g, &h_prev);
        counter::record_products(1);

        if i == 0 {
            break;
        }
        let gh = layer.weight().matvec_transpose(&g);
        let mut g_prev = Vector::zeros(gh.len());
        for j in 0..gh.len() {
            g_prev[j] = gh[j] * layer.activation.derivative(z[i - 1][j]);
        }
        if let Some(c) = inject[i - 1].take() {
            for j in 0..g_prev.len() {
                g_prev[j] += c[j];
            }
        }
        g = g_prev;
    }
}

/// Backward through the interval recursion: two adjoint vectors move in
/// lockstep, entering each weight entry on the branch its sign selected.
fn interval_sweep(
    net: &Network,
    bounds: &ibp::IntervalBounds,
    mut gu: Vector,
    mut gl: Vector,
    acc: &mut LoweredGrads,
) {
    counter::record_bwd_passes(2);
    for i in (0..net.n_layers()).rev() {
        let layer = &net.layers()[i];
        let a = layer.activation.apply_vec(&bounds.upper[i]);
        let b = layer.activation.apply_vec(&bounds.lower[i]);

        for (bias, (u, l)) in acc.b[i]
            .as_mut_slice()
            .iter_mut()
            .zip(gu.iter().zip(gl.iter()))
        {
            *bias += u + l;
        }
        {
            let cols = layer.in_dim();
            let w = layer.weight().as_slice();
            let wg = acc.w[i].as_mut_slice();
            for r in 0..gu.len() {
                let (ur, lr) = (gu[r], gl[r]);
                if ur == 0.0 && lr == 0.0 {
                    continue;
                }
                for c in 0..cols {
                    let wv = w[r * cols + c];
                    if wv > 0.0 {
                        wg[r * cols + c] += ur * a[c] + lr * b[c];
                    } else if wv < 0.0 {
                        wg[r * cols + c] += ur * b[c] + lr * a[c];
                    }
                }
            }
        }
        counter::record_products(2);

        if i == 0 {
            break;
        }
        let (ga, gb) = layer.weight().matvec_posneg_transpose_pair(&gu, &gl);
        // ga, gb are adjoints of σ(u^{i}), σ(l^{i}): this layer's own
        // input activation applied to its input level
        let mut gu_prev = Vector::zeros(ga.len());
        let mut gl_prev = Vector::zeros(gb.len());
        for j in 0..ga.len() {
            gu_prev[j] = ga[j] * layer.activation.derivative(bounds.upper[i][j]);
            gl_prev[j] = gb[j] * layer.activation.derivative(bounds.lower[i][j]);
        }
        gu = gu_prev;
        gl = gl_prev;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// Worst analytic-vs-numeric disagreement, by flat parameter index.
#[derive(Debug, Clone, Copy)]
pub struct WorstParam {
    pub layer: usize,
    pub kind: ParamKind,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct FiniteDiffReport {
    pub max_rel_err: f64,
    pub worst: Option<WorstParam>,
    pub checked: usize,
    /// Parameters skipped because θ±h landed on different branches.
    pub excluded: usize,
    /// Checked parameters whose relative error exceeded the tolerance.
    pub violations: usize,
}

/// Verify `backward_robust`'s own gradients against central differences.
#[allow(clippy::too_many_arguments)]
pub fn finite_diff_check(
    net: &Network,
    x_nom: &Vector,
    pert: &PerturbationSpec,
    y: &Vector,
    variant: TrainVariant,
    lambda_weight: f64,
    loss: Loss,
    clip_input: bool,
    h: f64,
    tol: f64,
) -> Result<FiniteDiffReport> {
    let (_, grads) = backward_robust(net, x_nom, pert, y, variant, lambda_weight, loss, clip_input)?;
    finite_diff_check_against(
        net, x_nom, pert, y, variant, lambda_weight, loss, clip_input, &grads, h, tol,
    )
}

/// Same check against a caller-supplied gradient set (lets tests inject
/// faults and watch the report catch them).
#[allow(clippy::too_many_arguments)]
pub fn finite_diff_check_against(
    net: &Network,
    x_nom: &Vector,
    pert: &PerturbationSpec,
    y: &Vector,
    variant: TrainVariant,
    lambda_weight: f64,
    loss: Loss,
    clip_input: bool,
    grads: &GradientSet,
    h: f64,
    tol: f64,
) -> Result<FiniteDiffReport> {
    if h <= 0.0 {
        return Err(Error::InvalidConfig(format!("step h must be positive, got {h}")));
    }
    let mut report = FiniteDiffReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
        excluded: 0,
        violations: 0,
    };

    let mut probe = |layer_idx: usize, kind: ParamKind, index: usize, analytic: f64| -> Result<()> {
        let eval = |delta: f64| -> Result<(LossBreakdown, Vec<u8>)> {
            let mut net2 = net.clone();
            let l = &net2.layers()[layer_idx];
            let mut w = l.param_weight();
            let mut b = l.param_bias();
            match kind {
                ParamKind::Weight => w.as_mut_slice()[index] += delta,
                ParamKind::Bias => b[index] += delta,
            }
            net2.layers_mut()[layer_idx].assign_params(w, b)?;
            eval_with_fingerprint(
                &net2, x_nom, pert, y, variant, lambda_weight, loss, clip_input, true,
            )
        };
        let (f_plus, fp_plus) = eval(h)?;
        let (f_minus, fp_minus) = eval(-h)?;
        if fp_plus != fp_minus {
            report.excluded += 1;
            return Ok(());
        }
        let numeric = (f_plus.total - f_minus.total) / (2.0 * h);
        let rel = (analytic - numeric).abs() / 1.0_f64.max(analytic.abs() + numeric.abs());
        report.checked += 1;
        if rel > tol {
            report.violations += 1;
        }
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = Some(WorstParam {
                layer: layer_idx,
                kind,
                index,
                analytic,
                numeric,
                rel_err: rel,
            });
        }
        Ok(())
    };

    for layer_idx in 0..net.n_layers() {
        let wg = &grads.weights[layer_idx];
        for index in 0..wg.as_slice().len() {
            probe(layer_idx, ParamKind::Weight, index, wg.as_slice()[index])?;
        }
        let bg = &grads.biases[layer_idx];
        for index in 0..bg.len() {
            probe(layer_idx, ParamKind::Bias, index, bg[index])?;
        }
    }
    Ok(report)
}
