//! Loss algebra of the four-generator objective.
//!
//! Terms, for batches `a` (domain A) and `b` (domain B):
//!
//! | term      | value                                |
//! |-----------|--------------------------------------|
//! | `tl_a`    | `‖a − G'_BA(G_AB(a))‖`               |
//! | `tl_b`    | `‖b − G'_AB(G_BA(b))‖`               |
//! | `rel1_b`  | `‖b − G_AB(a)‖`                      |
//! | `rel1_a`  | `‖a − G_BA(b)‖`                      |
//! | `rel2_b`  | `‖G'_AB(G_BA(b)) − G_AB(a)‖`         |
//! | `rel2_a`  | `‖G'_BA(G_AB(a)) − G_BA(b)‖`         |
//! | `adv_d_b` | `−E log D_B(b) − E log(1 − D_B(G_AB(a)))` |
//! | `adv_g_ab`| `−E log D_B(G_AB(a))` (non-saturating) |
//!
//! and the mirrored adversarial pair for `D_A` / `G_BA`. Weighted totals:
//!
//! ```text
//! total_g = λ_adv (adv_g_ab + adv_g_ba) + λ_tl (tl_a + tl_b)
//!         + λ_rel1 (rel1_b + rel1_a) + λ_rel2 (rel2_b + rel2_a)
//! total_d = adv_d_a + adv_d_b
//! ```
//!
//! A weighted group enters `total_g` only when its weight is positive and the
//! phase allows it; every term is still reported.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Reduction, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::nn::{GeneratorQuartet, Network};
use crate::schedule::{ActiveTerms, LossTerm};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before the log.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_adv: f64,
    pub lambda_tl: f64,
    pub lambda_rel1: f64,
    pub lambda_rel2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_adv: 1.0,
            lambda_tl: 10.0,
            lambda_rel1: 1.0,
            lambda_rel2: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self, training: bool) -> Result<()> {
        for (key, v) in [
            ("lambda_adv", self.lambda_adv),
            ("lambda_tl", self.lambda_tl),
            ("lambda_rel1", self.lambda_rel1),
            ("lambda_rel2", self.lambda_rel2),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("/weights/{key}"), "must be finite and >= 0"));
            }
        }
        if training && self.lambda_tl <= 0.0 {
            return Err(Error::config("/weights/lambda_tl", "must be > 0 when training"));
        }
        Ok(())
    }
}

/// Norm used by each reconstruction-style term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossNorms {
    pub tl: Reduction,
    pub rel1: Reduction,
    pub rel2: Reduction,
}

impl Default for LossNorms {
    fn default() -> Self {
        LossNorms {
            tl: Reduction::MeanAbs,
            rel1: Reduction::MeanAbs,
            rel2: Reduction::MeanAbs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialForm {
    /// Generator minimizes `−E log D(fake)`.
    #[default]
    NonSaturating,
    /// Generator minimizes `E log(1 − D(fake))`.
    Minimax,
}

/// What ReL1 compares against when the batches are not true pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rel1Policy {
    #[default]
    Off,
    /// Use whatever B was co-sampled with A.
    Minibatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    Paired,
    Unpaired(Rel1Policy),
}

impl Pairing {
    pub fn new(paired: bool, policy: Rel1Policy) -> Self {
        if paired {
            Pairing::Paired
        } else {
            Pairing::Unpaired(policy)
        }
    }

    pub fn rel1_available(self) -> bool {
        !matches!(self, Pairing::Unpaired(Rel1Policy::Off))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveOptions {
    pub norms: LossNorms,
    pub adversarial: AdversarialForm,
    pub pairing: Pairing,
}

impl Default for ObjectiveOptions {
    fn default() -> Self {
        ObjectiveOptions {
            norms: LossNorms::default(),
            adversarial: AdversarialForm::NonSaturating,
            pairing: Pairing::Paired,
        }
    }
}

/// Per-term scalars of one step. Serialized as one JSON line per step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub adv_d_a: f64,
    pub adv_d_b: f64,
    pub adv_g_ab: f64,
    pub adv_g_ba: f64,
    pub tl_a: f64,
    pub tl_b: f64,
    pub rel1_b: f64,
    pub rel1_a: f64,
    pub rel2_b: f64,
    pub rel2_a: f64,
    pub total_g: f64,
    pub total_d: f64,
}

impl LossReport {
    pub fn fields(&self) -> [(&'static str, f64); 12] {
        [
            ("adv_d_a", self.adv_d_a),
            ("adv_d_b", self.adv_d_b),
            ("adv_g_ab", self.adv_g_ab),
            ("adv_g_ba", self.adv_g_ba),
            ("tl_a", self.tl_a),
            ("tl_b", self.tl_b),
            ("rel1_b", self.rel1_b),
            ("rel1_a", self.rel1_a),
            ("rel2_b", self.rel2_b),
            ("rel2_a", self.rel2_a),
            ("total_g", self.total_g),
            ("total_d", self.total_d),
        ]
    }

    /// First non-finite field, if any.
    pub fn non_finite(&self) -> Option<&'static str> {
        self.fields()
            .into_iter()
            .find(|(_, v)| !v.is_finite())
            .map(|(k, _)| k)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// `reduce(x − y)` with a shape check.
pub fn distance<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, norm: Reduction) -> Result<Tensor<T>> {
    if x.shape() != y.shape() {
        return Err(Error::ShapeMismatch {
            op: "distance",
            lhs: x.shape().to_vec(),
            rhs: y.shape().to_vec(),
        });
    }
    x.sub(y)?.reduce(norm)
}

/// `‖a − g_back(g_fwd(a))‖`. With the primed return generator this is the TL
/// term; with the unprimed one it is CycleGAN's cycle loss.
pub fn cycle_loss<T: Scalar>(
    a: &Tensor<T>,
    g_fwd: &Network<T>,
    g_back: &Network<T>,
    norm: Reduction,
) -> Result<Tensor<T>> {
    let round_trip = g_back.forward(&g_fwd.forward(a)?)?;
    distance(a, &round_trip, norm)
}

/// ReL1: `‖b − fake_b‖`. Needs `b` aligned with the source of `fake_b`.
pub fn rel1_loss<T: Scalar>(
    b: &Tensor<T>,
    fake_b: &Tensor<T>,
    norm: Reduction,
    pairing: Pairing,
) -> Result<Tensor<T>> {
    if !pairing.rel1_available() {
        return Err(Error::Rel1Unpaired);
    }
    distance(b, fake_b, norm)
}

/// ReL2: `‖fake_b − refake_b‖`; gradient flows into both operands.
pub fn rel2_loss<T: Scalar>(fake_b: &Tensor<T>, refake_b: &Tensor<T>, norm: Reduction) -> Result<Tensor<T>> {
    distance(fake_b, refake_b, norm)
}

fn log_prob<T: Scalar>(p: &Tensor<T>) -> Result<Tensor<T>> {
    let eps = T::from_f64_lossy(PROB_EPS);
    p.clamp(eps, T::one() - eps).reduce(Reduction::LogMean)
}

fn log_one_minus<T: Scalar>(p: &Tensor<T>) -> Result<Tensor<T>> {
    let eps = T::from_f64_lossy(PROB_EPS);
    p.clamp(eps, T::one() - eps)
        .neg()
        .add_scalar(T::one())
        .reduce(Reduction::LogMean)
}

fn check_finite<T: Scalar>(t: Tensor<T>, term: &'static str) -> Result<Tensor<T>> {
    if t.item().is_finite() {
        Ok(t)
    } else {
        Err(Error::NonFinite { term: term.into() })
    }
}

/// `−E log d(real) − E log(1 − d(fake))`; `fake` is detached here.
pub fn discriminator_loss<T: Scalar>(d: &Network<T>, real: &Tensor<T>, fake: &Tensor<T>) -> Result<Tensor<T>> {
    let real_term = log_prob(&d.forward(real)?)?;
    let fake_term = log_one_minus(&d.forward(&fake.detach())?)?;
    check_finite(real_term.add(&fake_term)?.neg(), "discriminator loss")
}

/// Generator side of the adversarial game; `fake` stays on the tape.
pub fn generator_adversarial_loss<T: Scalar>(
    d: &Network<T>,
    fake: &Tensor<T>,
    form: AdversarialForm,
) -> Result<Tensor<T>> {
    let p = d.forward(fake)?;
    let loss = match form {
        AdversarialForm::NonSaturating => log_prob(&p)?.neg(),
        AdversarialForm::Minimax => log_one_minus(&p)?,
    };
    check_finite(loss, "generator adversarial loss")
}

/// Both sides of the adversarial loss for one discriminator.
pub fn adversarial_losses<T: Scalar>(
    d: &Network<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    form: AdversarialForm,
) -> Result<(Tensor<T>, Tensor<T>)> {
    Ok((
        discriminator_loss(d, real, fake)?,
        generator_adversarial_loss(d, fake, form)?,
    ))
}

/// The four generator outputs every objective term is built from.
#[derive(Debug, Clone)]
pub struct ForwardPass<T: Scalar> {
    /// `G_AB(a)`
    pub fake_b: Tensor<T>,
    /// `G_BA(b)`
    pub fake_a: Tensor<T>,
    /// `G'_BA(G_AB(a))`
    pub rec_a: Tensor<T>,
    /// `G'_AB(G_BA(b))`
    pub rec_b: Tensor<T>,
}

impl<T: Scalar> ForwardPass<T> {
    pub fn run(quartet: &GeneratorQuartet<T>, a: &Tensor<T>, b: &Tensor<T>) -> Result<Self> {
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                op: "total_objective",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let fake_b = quartet.g_ab.forward(a)?;
        let fake_a = quartet.g_ba.forward(b)?;
        let rec_a = quartet.g_ba_prime().forward(&fake_b)?;
        let rec_b = quartet.g_ab_prime().forward(&fake_a)?;
        Ok(ForwardPass {
            fake_b,
            fake_a,
            rec_a,
            rec_b,
        })
    }
}

/// Generator-side terms on the tape plus their weighted total.
#[derive(Debug, Clone)]
pub struct GeneratorObjective<T: Scalar> {
    pub adv_g_ab: Tensor<T>,
    pub adv_g_ba: Tensor<T>,
    pub tl_a: Tensor<T>,
    pub tl_b: Tensor<T>,
    pub rel1_b: Option<Tensor<T>>,
    pub rel1_a: Option<Tensor<T>>,
    pub rel2_b: Tensor<T>,
    pub rel2_a: Tensor<T>,
    pub total_g: Tensor<T>,
}

impl<T: Scalar> GeneratorObjective<T> {
    /// Fill the generator fields of `report`.
    pub fn write_report(&self, report: &mut LossReport) {
        let v = |t: &Tensor<T>| t.item().as_f64();
        report.adv_g_ab = v(&self.adv_g_ab);
        report.adv_g_ba = v(&self.adv_g_ba);
        report.tl_a = v(&self.tl_a);
        report.tl_b = v(&self.tl_b);
        report.rel1_b = self.rel1_b.as_ref().map_or(0.0, v);
        report.rel1_a = self.rel1_a.as_ref().map_or(0.0, v);
        report.rel2_b = v(&self.rel2_b);
        report.rel2_a = v(&self.rel2_a);
        report.total_g = v(&self.total_g);
    }
}

fn weighted_pair<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, weight: f64) -> Result<Tensor<T>> {
    Ok(x.add(y)?.mul_scalar(T::from_f64_lossy(weight)))
}

/// Generator terms from a forward pass and the current discriminators.
pub fn generator_objective<T: Scalar>(
    quartet: &GeneratorQuartet<T>,
    fwd: &ForwardPass<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    w: &LossWeights,
    active: ActiveTerms,
    opts: &ObjectiveOptions,
) -> Result<GeneratorObjective<T>> {
    let norms = &opts.norms;
    let adv_g_ab = generator_adversarial_loss(&quartet.d_b, &fwd.fake_b, opts.adversarial)
        .map_err(|e| e.in_term("adv_g_ab"))?;
    let adv_g_ba = generator_adversarial_loss(&quartet.d_a, &fwd.fake_a, opts.adversarial)
        .map_err(|e| e.in_term("adv_g_ba"))?;
    let tl_a = distance(a, &fwd.rec_a, norms.tl).map_err(|e| e.in_term("tl_a"))?;
    let tl_b = distance(b, &fwd.rec_b, norms.tl).map_err(|e| e.in_term("tl_b"))?;
    let (rel1_b, rel1_a) = if opts.pairing.rel1_available() {
        (
            Some(rel1_loss(b, &fwd.fake_b, norms.rel1, opts.pairing).map_err(|e| e.in_term("rel1_b"))?),
            Some(rel1_loss(a, &fwd.fake_a, norms.rel1, opts.pairing).map_err(|e| e.in_term("rel1_a"))?),
        )
    } else {
        (None, None)
    };
    let rel2_b = rel2_loss(&fwd.rec_b, &fwd.fake_b, norms.rel2).map_err(|e| e.in_term("rel2_b"))?;
    let rel2_a = rel2_loss(&fwd.rec_a, &fwd.fake_a, norms.rel2).map_err(|e| e.in_term("rel2_a"))?;

    let mut parts: Vec<Tensor<T>> = Vec::new();
    if active.contains(LossTerm::Adv) && w.lambda_adv > 0.0 {
        parts.push(weighted_pair(&adv_g_ab, &adv_g_ba, w.lambda_adv)?);
    }
    if active.contains(LossTerm::Tl) && w.lambda_tl > 0.0 {
        parts.push(weighted_pair(&tl_a, &tl_b, w.lambda_tl)?);
    }
    if let (Some(r1b), Some(r1a)) = (&rel1_b, &rel1_a) {
        if active.contains(LossTerm::Rel1) && w.lambda_rel1 > 0.0 {
            parts.push(weighted_pair(r1b, r1a, w.lambda_rel1)?);
        }
    }
    if active.contains(LossTerm::Rel2) && w.lambda_rel2 > 0.0 {
        parts.push(weighted_pair(&rel2_b, &rel2_a, w.lambda_rel2)?);
    }
    let total_g = match parts.split_first() {
        None => Tensor::scalar(T::zero()),
        Some((first, rest)) => rest.iter().try_fold(first.clone(), |acc, p| acc.add(p))?,
    };

    Ok(GeneratorObjective {
        adv_g_ab,
        adv_g_ba,
        tl_a,
        tl_b,
        rel1_b,
        rel1_a,
        rel2_b,
        rel2_a,
        total_g,
    })
}

/// Discriminator terms on detached fakes.
#[derive(Debug, Clone)]
pub struct DiscriminatorObjective<T: Scalar> {
    pub adv_d_a: Tensor<T>,
    pub adv_d_b: Tensor<T>,
    pub total_d: Tensor<T>,
}

pub fn discriminator_objective<T: Scalar>(
    quartet: &GeneratorQuartet<T>,
    fwd: &ForwardPass<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<DiscriminatorObjective<T>> {
    let adv_d_a = discriminator_loss(&quartet.d_a, a, &fwd.fake_a).map_err(|e| e.in_term("adv_d_a"))?;
    let adv_d_b = discriminator_loss(&quartet.d_b, b, &fwd.fake_b).map_err(|e| e.in_term("adv_d_b"))?;
    let total_d = adv_d_a.add(&adv_d_b)?;
    Ok(DiscriminatorObjective {
        adv_d_a,
        adv_d_b,
        total_d,
    })
}

/// Full objective evaluated against one fixed set of networks.
#[derive(Debug, Clone)]
pub struct Objective<T: Scalar> {
    pub generator: GeneratorObjective<T>,
    pub discriminator: DiscriminatorObjective<T>,
    pub report: LossReport,
}

pub fn total_objective<T: Scalar>(
    quartet: &GeneratorQuartet<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    w: &LossWeights,
    active: ActiveTerms,
    opts: &ObjectiveOptions,
) -> Result<Objective<T>> {
    let fwd = ForwardPass::run(quartet, a, b)?;
    let discriminator = discriminator_objective(quartet, &fwd, a, b)?;
    let generator = generator_objective(quartet, &fwd, a, b, w, active, opts)?;
    let mut report = LossReport {
        adv_d_a: discriminator.adv_d_a.item().as_f64(),
        adv_d_b: discriminator.adv_d_b.item().as_f64(),
        total_d: discriminator.total_d.item().as_f64(),
        ..LossReport::default()
    };
    generator.write_report(&mut report);
    Ok(Objective {
        generator,
        discriminator,
        report,
    })
}
