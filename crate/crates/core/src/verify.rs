//! Finite-difference checks of every loss term on tiny double-precision
//! fixtures (1×1×4×4 images, one residual block, no normalization).

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::autodiff::{finite_difference_check, CheckConfig, CheckReport, Reduction, Tensor};
use crate::error::{Error, Result};
use crate::losses::{
    discriminator_loss, distance, generator_adversarial_loss, rel1_loss, rel2_loss, AdversarialForm, Pairing,
};
use crate::nn::{role_seed, ArchConfig, GeneratorQuartet, Role};

/// Init scale of the fixtures; large enough that every layer is exercised
/// away from its linear regime.
pub const FIXTURE_STD: f64 = 0.5;
pub const FIXTURE_SEED: u64 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSelector {
    All,
    Tl,
    Rel1,
    Rel2,
    Adv,
}

impl std::str::FromStr for LossSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "all" => LossSelector::All,
            "tl" => LossSelector::Tl,
            "rel1" => LossSelector::Rel1,
            "rel2" => LossSelector::Rel2,
            "adv" => LossSelector::Adv,
            other => return Err(Error::config("/loss", format!("unknown loss `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    pub loss: LossSelector,
    pub tol: f64,
    /// Corrupt the derivative of `G_AB`'s output by 5% (harness self-test).
    pub inject_bug: bool,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            loss: LossSelector::All,
            tol: 1e-5,
            inject_bug: false,
            seed: FIXTURE_SEED,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NamedCheck {
    pub name: &'static str,
    pub report: CheckReport,
    /// `role.parameter[index]` of the worst entry.
    pub worst_entry: Option<String>,
}

pub fn fixture_arch() -> ArchConfig {
    ArchConfig {
        channels: 1,
        base_channels: 2,
        residual_blocks: 1,
        image_size: 4,
        instance_norm: false,
        leaky_slope: 0.2,
    }
}

pub struct Fixture {
    pub quartet: GeneratorQuartet<f64>,
    pub a: Tensor<f64>,
    pub b: Tensor<f64>,
    pub inject_bug: bool,
}

impl Fixture {
    pub fn new(seed: u64, inject_bug: bool) -> Result<Self> {
        let mut quartet = GeneratorQuartet::new(&fixture_arch(), false, seed)?;
        for role in quartet.owned_roles() {
            quartet.get_mut(role).init_with_std(role_seed(seed, role), FIXTURE_STD);
        }
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let mut image = || -> Result<Tensor<f64>> {
            Tensor::new(&[1, 1, 4, 4], (0..16).map(|_| rng.random_range(-1.0..1.0)).collect())
        };
        Ok(Fixture {
            a: image()?,
            b: image()?,
            quartet,
            inject_bug,
        })
    }

    fn fake_b(&self, q: &GeneratorQuartet<f64>) -> Result<Tensor<f64>> {
        let out = q.g_ab.forward(&self.a)?;
        Ok(if self.inject_bug {
            out.map_with_derivative(|x| x, |_| 1.05)
        } else {
            out
        })
    }

    /// Check `loss` against the parameters of `roles`.
    fn check(
        &self,
        name: &'static str,
        roles: &[Role],
        cfg: &CheckConfig,
        loss: impl Fn(&Self, &GeneratorQuartet<f64>) -> Result<Tensor<f64>>,
    ) -> Result<NamedCheck> {
        let mut params = Vec::new();
        let mut labels = Vec::new();
        let mut counts = Vec::new();
        for &role in roles {
            let net = self.quartet.get(role);
            for (pname, p) in net.parameters() {
                params.push(p.clone());
                labels.push(format!("{}.{pname}", role.key()));
            }
            counts.push(net.parameter_names().len());
        }
        let f = |values: &[Tensor<f64>]| -> Result<Tensor<f64>> {
            let mut q = self.quartet.clone();
            let mut offset = 0;
            for (&role, &n) in roles.iter().zip(&counts) {
                let net = q.get(role).with_parameters(&values[offset..offset + n])?;
                *q.get_mut(role) = net;
                offset += n;
            }
            loss(self, &q)
        };
        let report = finite_difference_check(f, &params, cfg)?;
        let worst_entry = report
            .worst
            .as_ref()
            .map(|w| format!("{}[{}]", labels[w.param], w.index));
        Ok(NamedCheck {
            name,
            report,
            worst_entry,
        })
    }
}

const GENERATORS: [Role; 4] = [Role::GAb, Role::GBa, Role::GAbPrime, Role::GBaPrime];

/// Run the selected checks.
pub fn run_gradchecks(opts: &GradcheckOptions) -> Result<Vec<NamedCheck>> {
    let fx = Fixture::new(opts.seed, opts.inject_bug)?;
    let cfg = CheckConfig {
        tol: opts.tol,
        ..CheckConfig::default()
    };
    let norm = Reduction::MeanAbs;
    let want = |s: LossSelector| opts.loss == LossSelector::All || opts.loss == s;
    let mut out = Vec::new();

    if want(LossSelector::Tl) {
        out.push(fx.check("tl", &GENERATORS, &cfg, |fx, q| {
            let rec_a = q.g_ba_prime().forward(&fx.fake_b(q)?)?;
            let rec_b = q.g_ab_prime().forward(&q.g_ba.forward(&fx.b)?)?;
            distance(&fx.a, &rec_a, norm)?.add(&distance(&fx.b, &rec_b, norm)?)
        })?);
    }
    if want(LossSelector::Rel1) {
        out.push(fx.check("rel1", &[Role::GAb, Role::GBa], &cfg, |fx, q| {
            let fake_a = q.g_ba.forward(&fx.b)?;
            rel1_loss(&fx.b, &fx.fake_b(q)?, norm, Pairing::Paired)?.add(&rel1_loss(
                &fx.a,
                &fake_a,
                norm,
                Pairing::Paired,
            )?)
        })?);
    }
    if want(LossSelector::Rel2) {
        out.push(fx.check("rel2", &GENERATORS, &cfg, |fx, q| {
            let fake_b = fx.fake_b(q)?;
            let fake_a = q.g_ba.forward(&fx.b)?;
            let rec_a = q.g_ba_prime().forward(&fake_b)?;
            let rec_b = q.g_ab_prime().forward(&fake_a)?;
            rel2_loss(&rec_b, &fake_b, norm)?.add(&rel2_loss(&rec_a, &fake_a, norm)?)
        })?);
    }
    if want(LossSelector::Adv) {
        let roles = [Role::GAb, Role::GBa, Role::DA, Role::DB];
        for (name, form) in [
            ("adv_g", AdversarialForm::NonSaturating),
            ("adv_g_minimax", AdversarialForm::Minimax),
        ] {
            out.push(fx.check(name, &roles, &cfg, move |fx, q| {
                let fake_a = q.g_ba.forward(&fx.b)?;
                generator_adversarial_loss(&q.d_b, &fx.fake_b(q)?, form)?
                    .add(&generator_adversarial_loss(&q.d_a, &fake_a, form)?)
            })?);
        }
        out.push(fx.check("adv_d", &[Role::DA, Role::DB], &cfg, |fx, q| {
            let fake_a = q.g_ba.forward(&fx.b)?;
            discriminator_loss(&q.d_a, &fx.a, &fake_a)?.add(&discriminator_loss(&q.d_b, &fx.b, &fx.fake_b(q)?)?)
        })?);
    }
    Ok(out)
}
