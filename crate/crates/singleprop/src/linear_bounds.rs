//! Linear-relaxation verification: per-neuron ReLU relaxations, affine
//! bounds on any layer by back-substitution to the input, ℓ∞
//! concretization, certification, and certified-radius search.
//!
//! Two relaxation modes share the code path. Both use the chord
//! `z_U/(z_U−z_L)·t − z_U·z_L/(z_U−z_L)` as the upper line on an unstable
//! neuron; `FastLin` reuses the chord's slope (through the origin) as the
//! lower line, `Zero` uses the constant 0.

use crate::error::{Error, Result};
use crate::ibp::PerturbationSpec;
use crate::network::{Activation, Network};
use crate::tensor::{Matrix, Vector};

/// Lower-line choice for unstable ReLUs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelaxMode {
    FastLin,
    Zero,
}

/// Per-neuron bounding lines for one activation layer:
/// `alpha_l·t + beta_l ≤ σ(t) ≤ alpha_u·t + beta_u` on the neuron's interval.
#[derive(Debug, Clone)]
pub struct Relaxation {
    pub alpha_l: Vector,
    pub alpha_u: Vector,
    pub beta_l: Vector,
    pub beta_u: Vector,
}

impl Relaxation {
    /// Exact identity relaxation (used where the activation is Identity).
    pub fn identity(n: usize) -> Self {
        Relaxation {
            alpha_l: Vector::filled(n, 1.0),
            alpha_u: Vector::filled(n, 1.0),
            beta_l: Vector::zeros(n),
            beta_u: Vector::zeros(n),
        }
    }
}

/// ReLU relaxation from pre-activation bounds. Neurons with `z_l ≥ 0` or
/// `z_u ≤ 0` are stable (ties at 0 included) and get exact lines.
pub fn relax_relu(z_l: &Vector, z_u: &Vector, mode: RelaxMode) -> Result<Relaxation> {
    if z_l.len() != z_u.len() {
        return Err(Error::Shape {
            op: "relax_relu",
            expected: format!("matching bounds, lower has {}", z_l.len()),
            got: format!("upper has {}", z_u.len()),
        });
    }
    let n = z_l.len();
    let mut r = Relaxation {
        alpha_l: Vector::zeros(n),
        alpha_u: Vector::zeros(n),
        beta_l: Vector::zeros(n),
        beta_u: Vector::zeros(n),
    };
    for j in 0..n {
        let (l, u) = (z_l[j], z_u[j]);
        if l > u {
            return Err(Error::InvalidInterval {
                context: "relax_relu",
                lower: l,
                upper: u,
            });
        }
        if l >= 0.0 {
            r.alpha_l[j] = 1.0;
            r.alpha_u[j] = 1.0;
        } else if u <= 0.0 {
            // all-zero row already in place
        } else {
            let slope = u / (u - l);
            r.alpha_u[j] = slope;
            r.beta_u[j] = -u * l / (u - l);
            if mode == RelaxMode::FastLin {
                r.alpha_l[j] = slope;
            }
        }
    }
    Ok(r)
}

/// Affine bounds on a layer's pre-activations as functions of the input:
/// `A_l·x + b_l ≤ z ≤ A_u·x + b_u` over the perturbation box.
#[derive(Debug, Clone)]
pub struct LinearBounds {
    pub a_l: Matrix,
    pub a_u: Matrix,
    pub b_l: Vector,
    pub b_u: Vector,
}

/// Build affine input bounds on layer `up_to_layer` (1-based) by recursive
/// substitution. `relaxations[i-1]` must bound the activation applied to
/// `z^i` by layer i+1, for i = 1..up_to_layer−1.
pub fn backsubstitute(
    net: &Network,
    relaxations: &[Relaxation],
    up_to_layer: usize,
) -> Result<LinearBounds> {
    let k = up_to_layer;
    if k == 0 || k > net.n_layers() {
        return Err(Error::IndexOutOfRange {
            index: k,
            dim: net.n_layers(),
        });
    }
    if relaxations.len() < k - 1 {
        return Err(Error::InvalidConfig(format!(
            "backsubstitute to layer {k} needs {} relaxations, got {}",
            k - 1,
            relaxations.len()
        )));
    }

    let top = &net.layers()[k - 1];
    let mut a_u = top.weight().clone();
    let mut b_u = top.bias().clone();
    let mut a_l = top.weight().clone();
    let mut b_l = top.bias().clone();

    for i in (1..k).rev() {
        // absorb the activation applied to z^i, choosing the line per sign
        // of each accumulated coefficient
        if net.layers()[i].activation == Activation::Relu {
            let r = &relaxations[i - 1];
            absorb_relaxation(&mut a_u, &mut b_u, r, true);
            absorb_relaxation(&mut a_l, &mut b_l, r, false);
        }
        // substitute the affine layer i
        let layer = &net.layers()[i - 1];
        for (acc, bias) in [(&a_u, &mut b_u), (&a_l, &mut b_l)] {
            let shift = acc.matvec(layer.bias()).expect("dims chain");
            for (b, s) in bias.as_mut_slice().iter_mut().zip(shift.iter()) {
                *b += s;
            }
        }
        a_u = a_u.matmul(layer.weight()).expect("dims chain");
        a_l = a_l.matmul(layer.weight()).expect("dims chain");
    }

    Ok(LinearBounds { a_l, a_u, b_l, b_u })
}

/// Column-scale `a` by the relaxation, folding intercepts into `b`.
/// `upper` selects which line a positive coefficient takes.
fn absorb_relaxation(a: &mut Matrix, b: &mut Vector, r: &Relaxation, upper: bool) {
    let cols = a.cols();
    for row in 0..a.rows() {
        let mut shift = 0.0;
        let data = a.as_mut_slice();
        for j in 0..cols {
            let c = data[row * cols + j];
            let take_first = (c > 0.0) == upper; // coeff sign picks the line
            let (alpha, beta) = if take_first {
                (r.alpha_u[j], r.beta_u[j])
            } else {
                (r.alpha_l[j], r.beta_l[j])
            };
            data[row * cols + j] = c * alpha;
            shift += c * beta;
        }
        b[row] += shift;
    }
}

/// Concretized bounds of one layer, with a cancellation-free midpoint
/// `(z_l + z_u)/2 = (c_l + c_u)/2 + (r_u − r_l)/2`.
#[derive(Debug, Clone)]
pub struct ConcreteBounds {
    pub lower: Vector,
    pub upper: Vector,
    pub midpoint: Vector,
}

/// Evaluate affine bounds over the ℓ∞ ball:
/// `z_l = A_l·x + b_l − ε·‖A_l‖₁ᵣₒw`, `z_u = A_u·x + b_u + ε·‖A_u‖₁ᵣₒw`.
pub fn concretize_full(
    lb: &LinearBounds,
    x_nom: &Vector,
    pert: &PerturbationSpec,
) -> Result<ConcreteBounds> {
    let eps = pert.epsilon();
    let mut c_l = lb.a_l.matvec(x_nom)?;
    let mut c_u = lb.a_u.matvec(x_nom)?;
    for ((c, b), cu_b) in c_l
        .as_mut_slice()
        .iter_mut()
        .zip(lb.b_l.iter())
        .zip(c_u.as_mut_slice().iter_mut().zip(lb.b_u.iter()))
    {
        *c += b;
        let (cu, bu) = cu_b;
        *cu += bu;
    }
    let norm_l = lb.a_l.row_dual_norm(1).expect("q=1");
    let norm_u = lb.a_u.row_dual_norm(1).expect("q=1");

    let n = c_l.len();
    let mut lower = Vector::zeros(n);
    let mut upper = Vector::zeros(n);
    let mut midpoint = Vector::zeros(n);
    for j in 0..n {
        let r_l = eps * norm_l[j];
        let r_u = eps * norm_u[j];
        lower[j] = c_l[j] - r_l;
        upper[j] = c_u[j] + r_u;
        midpoint[j] = (c_l[j] + c_u[j]) / 2.0 + (r_u - r_l) / 2.0;
        if lower[j] > upper[j] {
            return Err(Error::InvalidInterval {
                context: "concretize",
                lower: lower[j],
                upper: upper[j],
            });
        }
    }
    Ok(ConcreteBounds {
        lower,
        upper,
        midpoint,
    })
}

/// Spec-shaped concretization returning just the bound pair.
pub fn concretize(
    lb: &LinearBounds,
    x_nom: &Vector,
    pert: &PerturbationSpec,
) -> Result<(Vector, Vector)> {
    let cb = concretize_full(lb, x_nom, pert)?;
    Ok((cb.lower, cb.upper))
}

/// Full verification run: intermediate pre-activation bounds for every
/// layer (each by complete back-substitution to the input), relaxations
/// built as the sweep ascends, and the certification verdict for
/// `true_class` on the output bounds.
#[derive(Debug, Clone)]
pub struct LinearVerification {
    /// Pre-activation bounds for layers 1..n.
    pub layers: Vec<ConcreteBounds>,
    pub certified: bool,
}

impl LinearVerification {
    pub fn output(&self) -> &ConcreteBounds {
        self.layers.last().expect("non-empty network")
    }
}

pub fn linear_verify(
    net: &Network,
    x_nom: &Vector,
    pert: &PerturbationSpec,
    mode: RelaxMode,
    true_class: usize,
) -> Result<LinearVerification> {
    if true_class >= net.output_dim() {
        return Err(Error::IndexOutOfRange {
            index: true_class,
            dim: net.output_dim(),
        });
    }
    let n = net.n_layers();
    let mut relaxations: Vec<Relaxation> = Vec::with_capacity(n.saturating_sub(1));
    let mut layers = Vec::with_capacity(n);
    for k in 1..=n {
        let lb = backsubstitute(net, &relaxations, k)?;
        let cb = concretize_full(&lb, x_nom, pert)?;
        if k < n {
            let next_act = net.layers()[k].activation;
            relaxations.push(match next_act {
                Activation::Relu => relax_relu(&cb.lower, &cb.upper, mode)?,
                Activation::Identity => Relaxation::identity(cb.lower.len()),
            });
        }
        layers.push(cb);
    }

    let out = layers.last().expect("non-empty network");
    let lc = out.lower[true_class];
    let certified = (0..out.upper.len()).all(|j| j == true_class || out.upper[j] <= lc);
    Ok(LinearVerification { certified, layers })
}

/// Result of the certified-radius search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertifiedRadius {
    pub radius: f64,
    /// The nominal point was already misclassified; radius is 0 by fiat.
    pub nominal_misclassified: bool,
}

/// Search cap: nets that certify everything (e.g. constant outputs) report
/// this radius instead of diverging.
const RADIUS_CAP: f64 = 1e9;

/// Largest ε (within `tol`) at which `linear_verify` certifies, by
/// doubling then bisection.
pub fn certified_radius(
    net: &Network,
    x_nom: &Vector,
    true_class: usize,
    mode: RelaxMode,
    tol: f64,
) -> Result<CertifiedRadius> {
    if tol <= 0.0 {
        return Err(Error::InvalidConfig(format!("tol must be positive, got {tol}")));
    }
    let trace = net.forward(x_nom)?;
    if trace.logits().argmax() != true_class {
        return Ok(CertifiedRadius {
            radius: 0.0,
            nominal_misclassified: true,
        });
    }
    let certifies = |e: f64| -> Result<bool> {
        let pert = PerturbationSpec::new(e)?;
        Ok(linear_verify(net, x_nom, &pert, mode, true_class)?.certified)
    };

    let mut lo = 0.0;
    let mut hi = tol.max(1e-3);
    loop {
        if !certifies(hi)? {
            break;
        }
        lo = hi;
        hi *= 2.0;
        if hi > RADIUS_CAP {
            return Ok(CertifiedRadius {
                radius: RADIUS_CAP,
                nominal_misclassified: false,
            });
        }
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if certifies(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(CertifiedRadius {
        radius: lo,
        nominal_misclassified: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ibp;
    use crate::network::{ArchSpec, Layer};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn dense(rows: usize, cols: usize, w: &[f64], b: &[f64], act: Activation) -> Layer {
        Layer::dense(
            Matrix::new(rows, cols, w.to_vec()).unwrap(),
            Vector::new(b.to_vec()),
            act,
        )
        .unwrap()
    }

    fn eps(e: f64) -> PerturbationSpec {
        PerturbationSpec::new(e).unwrap()
    }

    fn vecf(d: &[f64]) -> Vector {
        Vector::new(d.to_vec())
    }

    #[test]
    fn relax_hand_cases() {
        let r = relax_relu(&vecf(&[-1.0]), &vecf(&[1.0]), RelaxMode::FastLin).unwrap();
        assert_eq!(
            (r.alpha_l[0], r.alpha_u[0], r.beta_l[0], r.beta_u[0]),
            (0.5, 0.5, 0.0, 0.5)
        );

        let r = relax_relu(&vecf(&[1.0]), &vecf(&[2.0]), RelaxMode::FastLin).unwrap();
        assert_eq!(
            (r.alpha_l[0], r.alpha_u[0], r.beta_l[0], r.beta_u[0]),
            (1.0, 1.0, 0.0, 0.0)
        );

        let r = relax_relu(&vecf(&[-1.0]), &vecf(&[1.0]), RelaxMode::Zero).unwrap();
        assert_eq!(
            (r.alpha_l[0], r.alpha_u[0], r.beta_l[0], r.beta_u[0]),
            (0.0, 0.5, 0.0, 0.5)
        );
    }

    #[test]
    fn relax_boundary_ties_are_stable() {
        let r = relax_relu(&vecf(&[0.0, -2.0]), &vecf(&[2.0, 0.0]), RelaxMode::FastLin).unwrap();
        assert_eq!((r.alpha_l[0], r.alpha_u[0]), (1.0, 1.0));
        assert_eq!((r.alpha_l[1], r.alpha_u[1], r.beta_u[1]), (0.0, 0.0, 0.0));
    }

    #[test]
    fn relax_rejects_inverted_interval() {
        assert!(matches!(
            relax_relu(&vecf(&[1.0]), &vecf(&[0.0]), RelaxMode::Zero),
            Err(Error::InvalidInterval { .. })
        ));
    }

    #[test]
    fn linear_net_backsubstitution_is_exact_product() {
        let w1 = [0.5, -1.0, 2.0, 0.0, 1.5, -0.5];
        let w2 = [1.0, -2.0, 0.0, 0.5, 1.0, 1.0];
        let net = Network::from_dense_layers(
            3,
            vec![
                dense(2, 3, &w1, &[0.3, -0.2], Activation::Identity),
                dense(3, 2, &w2, &[0.1, 0.0, -0.4], Activation::Identity),
            ],
        )
        .unwrap();
        let lb = backsubstitute(&net, &[Relaxation::identity(2)], 2).unwrap();
        let prod = Matrix::new(3, 2, w2.to_vec())
            .unwrap()
            .matmul(&Matrix::new(2, 3, w1.to_vec()).unwrap())
            .unwrap();
        assert_eq!(lb.a_u, prod);
        assert_eq!(lb.a_l, prod);
        assert_eq!(lb.b_u, lb.b_l);
        // offset: W²·b¹ + b²
        let shift = Matrix::new(3, 2, w2.to_vec())
            .unwrap()
            .matvec(&vecf(&[0.3, -0.2]))
            .unwrap();
        for j in 0..3 {
            assert!((lb.b_u[j] - (shift[j] + [0.1, 0.0, -0.4][j])).abs() < 1e-15);
        }
    }

    /// 1-1-1 net with one unstable ReLU, hand back-substitution:
    /// z¹ ∈ [−1,1], chord slope ½, intercept ½.
    fn one_relu_chain() -> Network {
        Network::from_dense_layers(
            1,
            vec![
                dense(1, 1, &[1.0], &[0.0], Activation::Identity),
                dense(1, 1, &[1.0], &[0.0], Activation::Relu),
            ],
        )
        .unwrap()
    }

    #[test]
    fn one_relu_hand_backsubstitution() {
        let net = one_relu_chain();
        let x = vecf(&[0.0]);

        let v = linear_verify(&net, &x, &eps(1.0), RelaxMode::FastLin, 0).unwrap();
        assert_eq!(v.layers[0].lower.as_slice(), &[-1.0]);
        assert_eq!(v.layers[0].upper.as_slice(), &[1.0]);
        assert!((v.output().upper[0] - 1.0).abs() < 1e-15);
        assert!((v.output().lower[0] - (-0.5)).abs() < 1e-15);

        let v = linear_verify(&net, &x, &eps(1.0), RelaxMode::Zero, 0).unwrap();
        assert!((v.output().upper[0] - 1.0).abs() < 1e-15);
        assert_eq!(v.output().lower[0], 0.0);
    }

    #[test]
    fn forced_stability_collapses_to_exact_affine() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let w1: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w2: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // +10 biases keep every hidden neuron strictly positive at ε=0.1
        let net = Network::from_dense_layers(
            3,
            vec![
                dense(4, 3, &w1, &[10.0; 4], Activation::Identity),
                dense(2, 4, &w2, &[0.0, 0.0], Activation::Relu),
            ],
        )
        .unwrap();
        let x = vecf(&[0.2, -0.1, 0.4]);
        let v = linear_verify(&net, &x, &eps(0.1), RelaxMode::FastLin, 0).unwrap();
        // stable-positive relaxation is exact: upper and lower affine forms
        // coincide with W²W¹, so the gap is exactly 2ε‖W²W¹‖ per row
        let prod = Matrix::new(2, 4, w2.to_vec())
            .unwrap()
            .matmul(&Matrix::new(4, 3, w1.to_vec()).unwrap())
            .unwrap();
        let norms = prod.row_dual_norm(1).unwrap();
        for j in 0..2 {
            let gap = v.output().upper[j] - v.output().lower[j];
            assert!((gap - 0.2 * norms[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn concretize_hand_values() {
        let lb = LinearBounds {
            a_l: Matrix::new(1, 2, vec![1.0, -1.0]).unwrap(),
            a_u: Matrix::new(1, 2, vec![1.0, -1.0]).unwrap(),
            b_l: Vector::zeros(1),
            b_u: Vector::zeros(1),
        };
        let (l, u) = concretize(&lb, &vecf(&[0.0, 0.0]), &eps(1.0)).unwrap();
        assert_eq!((l[0], u[0]), (-2.0, 2.0));

        let (l0, u0) = concretize(&lb, &vecf(&[0.5, 0.25]), &eps(0.0)).unwrap();
        assert_eq!(l0[0], 0.25);
        assert_eq!(u0[0], 0.25);

        let (l1, u1) = concretize(&lb, &vecf(&[0.5, 0.25]), &eps(0.2)).unwrap();
        assert!(l1[0] < l0[0] && u1[0] > u0[0]);
    }

    #[test]
    fn zero_epsilon_verdict_matches_argmax() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        for seed in 0..20 {
            let net = Network::init(&ArchSpec::mlp(5, &[7, 6, 4]), seed).unwrap();
            let x = Vector::new((0..5).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let pred = net.forward(&x).unwrap().logits().argmax();
            for mode in [RelaxMode::FastLin, RelaxMode::Zero] {
                let v = linear_verify(&net, &x, &eps(0.0), mode, pred).unwrap();
                assert!(v.certified, "seed {seed} mode {mode:?}");
            }
        }
    }

    #[test]
    fn zero_mode_never_looser_than_ibp() {
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        for seed in 0..40 {
            let net = Network::init(&ArchSpec::mlp(4, &[6, 6, 3]), 1000 + seed).unwrap();
            let x = Vector::new((0..4).map(|_| rng.gen_range(0.0..1.0)).collect());
            let e = eps(0.1);
            let v = linear_verify(&net, &x, &e, RelaxMode::Zero, 0).unwrap();
            let b = ibp::ibp_propagate(&net, &x, &e, false).unwrap();
            for j in 0..3 {
                let zero_gap = v.output().upper[j] - v.output().lower[j];
                let ibp_gap = b.output_upper()[j] - b.output_lower()[j];
                assert!(
                    zero_gap <= ibp_gap + 1e-9,
                    "seed {seed} logit {j}: zero {zero_gap} > ibp {ibp_gap}"
                );
            }
        }
    }

    #[test]
    fn certified_radius_linear_closed_form() {
        // 1-layer net: radius = min_j (z_c − z_j)/(‖w_c‖₁ + ‖w_j‖₁)
        let w = [1.0, -2.0, 0.5, 1.0, -1.0, 0.0];
        let net = Network::from_dense_layers(
            2,
            vec![dense(3, 2, &w, &[0.2, -0.1, 0.05], Activation::Identity)],
        )
        .unwrap();
        let x = vecf(&[0.8, 0.1]);
        let t = net.forward(&x).unwrap();
        let c = t.logits().argmax();
        let wm = Matrix::new(3, 2, w.to_vec()).unwrap();
        let norms = wm.row_dual_norm(1).unwrap();
        let want = (0..3)
            .filter(|&j| j != c)
            .map(|j| (t.logits()[c] - t.logits()[j]) / (norms[c] + norms[j]))
            .fold(f64::INFINITY, f64::min);

        for mode in [RelaxMode::FastLin, RelaxMode::Zero] {
            let r = certified_radius(&net, &x, c, mode, 1e-7).unwrap();
            assert!(!r.nominal_misclassified);
            assert!(
                (r.radius - want).abs() <= 2e-7,
                "mode {mode:?}: {} vs {}",
                r.radius,
                want
            );
        }
    }

    #[test]
    fn certified_radius_flags_misclassified_nominal() {
        let net = one_relu_chain();
        // class 0 is the only logit; ask for a class that never wins
        let net2 = Network::from_dense_layers(
            1,
            vec![dense(2, 1, &[1.0, 2.0], &[0.0, 0.0], Activation::Identity)],
        )
        .unwrap();
        let r = certified_radius(&net2, &vecf(&[1.0]), 0, RelaxMode::Zero, 1e-6).unwrap();
        assert_eq!(r.radius, 0.0);
        assert!(r.nominal_misclassified);

        let r = certified_radius(&net, &vecf(&[1.0]), 0, RelaxMode::Zero, 1e-6).unwrap();
        assert!(!r.nominal_misclassified);
    }

    #[test]
    fn zero_radius_at_least_ibp_radius() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for seed in 0..15 {
            let net = Network::init(&ArchSpec::mlp(4, &[5, 5, 3]), 2000 + seed).unwrap();
            let x = Vector::new((0..4).map(|_| rng.gen_range(0.0..1.0)).collect());
            let c = net.forward(&x).unwrap().logits().argmax();

            // bisect the interval verifier the same way
            let ibp_cert = |e: f64| {
                let b = ibp::ibp_propagate(&net, &x, &eps(e), false).unwrap();
                ibp::ibp_certify(&b, c).unwrap()
            };
            let (mut lo, mut hi) = (0.0, 1e-3);
            while ibp_cert(hi) {
                lo = hi;
                hi *= 2.0;
            }
            while hi - lo > 1e-6 {
                let mid = 0.5 * (lo + hi);
                if ibp_cert(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }

            let r = certified_radius(&net, &x, c, RelaxMode::Zero, 1e-6).unwrap();
            assert!(
                r.radius >= lo - 2e-6,
                "seed {seed}: zero radius {} < ibp radius {lo}",
                r.radius
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn relaxation_lines_bracket_relu(l in -5.0f64..0.0, gap in 1e-6f64..10.0) {
            let u = l + gap;
            for mode in [RelaxMode::FastLin, RelaxMode::Zero] {
                let r = relax_relu(&vecf(&[l]), &vecf(&[u]), mode).unwrap();
                for g in 0..=1000 {
                    let t = l + gap * (g as f64) / 1000.0;
                    let relu = t.max(0.0);
                    let lo = r.alpha_l[0] * t + r.beta_l[0];
                    let hi = r.alpha_u[0] * t + r.beta_u[0];
                    prop_assert!(lo <= relu + 1e-12, "lower line above ReLU at t={}", t);
                    prop_assert!(hi >= relu - 1e-12, "upper line below ReLU at t={}", t);
                }
            }
        }

        #[test]
        fn sampled_outputs_stay_inside_concretized_bounds(seed in 0u64..300, e in 0.0f64..0.3) {
            let net = Network::init(&ArchSpec::mlp(4, &[6, 5, 3]), seed).unwrap();
            let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x5151);
            let x = Vector::new((0..4).map(|_| rng.gen_range(0.0..1.0)).collect());
            for mode in [RelaxMode::FastLin, RelaxMode::Zero] {
                let v = linear_verify(&net, &x, &eps(e), mode, 0).unwrap();
                for _ in 0..10 {
                    let xp = Vector::new(x.iter().map(|v| v + rng.gen_range(-e..=e)).collect());
                    let t = net.forward(&xp).unwrap();
                    for (i, z) in t.pre_activations.iter().enumerate() {
                        for j in 0..z.len() {
                            prop_assert!(
                                z[j] >= v.layers[i].lower[j] - 1e-9,
                                "{mode:?} layer {i} neuron {j} below"
                            );
                            prop_assert!(
                                z[j] <= v.layers[i].upper[j] + 1e-9,
                                "{mode:?} layer {i} neuron {j} above"
                            );
                        }
                    }
                }
            }
        }
    }
}
