//! Alternating cycle-GAN updates with least-squares adversarial losses.

use std::io::Write;

use image::RgbImage;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use stainlab_autodiff::{Adam, Graph, Tensor, Var};
use stainlab_core::seed::stream;
use stainlab_core::synth::{Arm, Dataset, Split};
use stainlab_core::Stain;

use crate::config::{CycleGanConfig, Domain};
use crate::domain::{crop, image_to_tensor, stack, unstack};
use crate::error::{CycleGanError, Result};
use crate::nets::CycleGanModels;
use crate::pool::ImagePool;

const ADAM_EPS: f64 = 1e-8;

/// Losses of one training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    #[serde(rename = "loss_G_adv")]
    pub g_adv: f64,
    #[serde(rename = "loss_F_adv")]
    pub f_adv: f64,
    #[serde(rename = "loss_cycle_fwd")]
    pub cycle_fwd: f64,
    #[serde(rename = "loss_cycle_bwd")]
    pub cycle_bwd: f64,
    #[serde(rename = "loss_D_s")]
    pub d_s: f64,
    #[serde(rename = "loss_D_t")]
    pub d_t: f64,
    #[serde(rename = "loss_identity")]
    pub identity: f64,
    /// Generator objective.
    pub total: f64,
}

impl LossRecord {
    pub fn cycle_total(&self) -> f64 {
        self.cycle_fwd + self.cycle_bwd
    }

    pub fn all_finite(&self) -> bool {
        [
            self.g_adv,
            self.f_adv,
            self.cycle_fwd,
            self.cycle_bwd,
            self.d_s,
            self.d_t,
            self.identity,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Unpaired training pools, as `[1, 3, H, W]` tensors in the configured domain.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub domain: Domain,
    pub triplex: Vec<Tensor>,
    pub singleplex: Vec<Tensor>,
}

impl TrainData {
    pub fn from_images(triplex: &[&RgbImage], singleplex: &[&RgbImage], domain: Domain) -> Result<Self> {
        if triplex.is_empty() || singleplex.is_empty() {
            return Err(CycleGanError::Config("both training pools need at least one image".into()));
        }
        let conv = |imgs: &[&RgbImage]| imgs.iter().map(|i| image_to_tensor(i, domain)).collect::<Result<Vec<_>>>();
        Ok(Self {
            domain,
            triplex: conv(triplex)?,
            singleplex: conv(singleplex)?,
        })
    }

    /// Training-split triplex patches and singleplex patches of one marker.
    pub fn from_dataset(dataset: &Dataset, stain: Stain, domain: Domain) -> Result<Self> {
        Self::from_images(
            &dataset.images(Arm::Triplex, None, Split::Train),
            &dataset.images(Arm::Singleplex, Some(stain), Split::Train),
            domain,
        )
    }
}

/// Everything a training run owns.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: CycleGanConfig,
    pub models: CycleGanModels,
    pub adam: Adam,
    pub pool_s: ImagePool,
    pub pool_t: ImagePool,
    pub rng: ChaCha8Rng,
    pub step: usize,
    pub history: Vec<LossRecord>,
}

/// Generator-phase results: losses and the generated images.
#[derive(Debug, Clone)]
pub(crate) struct GeneratorPhase {
    pub record: LossRecord,
    pub fake_s: Tensor,
    pub fake_t: Tensor,
}

fn add_all(g: &mut Graph, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for t in &terms[1..] {
        acc = g.add(acc, *t)?;
    }
    Ok(acc)
}

fn lsgan(g: &mut Graph, scores: Var, target: f64) -> Result<Var> {
    let t = g.input(Tensor::full(g.value(scores).shape(), target))?;
    Ok(g.mse_loss(scores, t)?)
}

impl TrainState {
    pub fn new(config: CycleGanConfig) -> Result<Self> {
        let models = CycleGanModels::build(&config)?;
        Self::with_models(config, models)
    }

    pub fn with_models(config: CycleGanConfig, models: CycleGanModels) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            adam: Adam::new(config.lr, config.betas.0, config.betas.1, ADAM_EPS),
            pool_s: ImagePool::new(config.pool_size),
            pool_t: ImagePool::new(config.pool_size),
            rng: stream(config.seed, "train", 0),
            step: 0,
            history: Vec::new(),
            models,
            config,
        })
    }

    /// Random `batch` images from each pool, randomly cropped to `patch_size`.
    pub fn sample_batch(&mut self, data: &TrainData) -> Result<(Tensor, Tensor)> {
        if data.domain != self.config.input_domain {
            return Err(CycleGanError::Config(format!(
                "training data is in the {} domain, config expects {}",
                data.domain.name(),
                self.config.input_domain.name()
            )));
        }
        let size = self.config.patch_size as usize;
        let pick = |pool: &[Tensor], rng: &mut ChaCha8Rng| -> Result<Tensor> {
            let mut items = Vec::with_capacity(self.config.batch);
            for _ in 0..self.config.batch {
                let t = &pool[rng.random_range(0..pool.len())];
                let (_, _, h, w) = t.dims4()?;
                if h < size || w < size {
                    return Err(CycleGanError::Config(format!("training image {w}x{h} is smaller than patch_size {size}")));
                }
                let x0 = rng.random_range(0..=w - size);
                let y0 = rng.random_range(0..=h - size);
                items.push(crop(t, x0, y0, size)?);
            }
            stack(&items.iter().collect::<Vec<_>>())
        };
        let s = pick(&data.triplex, &mut self.rng)?;
        let t = pick(&data.singleplex, &mut self.rng)?;
        Ok((s, t))
    }

    /// Generator losses with both discriminators frozen. Leaves gradients for
    /// the `G.` and `F.` parameters in the store.
    pub(crate) fn generator_phase(&mut self, real_s: &Tensor, real_t: &Tensor) -> Result<GeneratorPhase> {
        let m = &mut self.models;
        m.store.zero_grad();
        m.store.set_requires_grad("Ds.", false);
        m.store.set_requires_grad("Dt.", false);
        let result = (|| {
            let store = &m.store;
            let mut g = Graph::new();
            let xs = g.input(real_s.clone())?;
            let xt = g.input(real_t.clone())?;
            let fake_t = m.g.forward(&mut g, store, xs)?;
            let rec_s = m.f.forward(&mut g, store, fake_t)?;
            let fake_s = m.f.forward(&mut g, store, xt)?;
            let rec_t = m.g.forward(&mut g, store, fake_s)?;
            let dt_fake = m.d_t.forward(&mut g, store, fake_t)?;
            let ds_fake = m.d_s.forward(&mut g, store, fake_s)?;
            let g_adv = lsgan(&mut g, dt_fake, 1.0)?;
            let f_adv = lsgan(&mut g, ds_fake, 1.0)?;
            let cyc_fwd = g.l1_loss(rec_s, xs)?;
            let cyc_bwd = g.l1_loss(rec_t, xt)?;
            let cyc = g.add(cyc_fwd, cyc_bwd)?;
            let cyc = g.scale(cyc, self.config.lambda_cycle)?;
            let mut terms = vec![g_adv, f_adv, cyc];
            let mut identity = 0.0;
            if self.config.lambda_identity > 0.0 {
                let id_t = m.g.forward(&mut g, store, xt)?;
                let id_s = m.f.forward(&mut g, store, xs)?;
                let l_t = g.l1_loss(id_t, xt)?;
                let l_s = g.l1_loss(id_s, xs)?;
                let id = g.add(l_t, l_s)?;
                identity = g.value(id).data()[0];
                terms.push(g.scale(id, self.config.lambda_identity)?);
            }
            let total = add_all(&mut g, &terms)?;
            g.backward(total)?;
            let scalar = |v: Var| g.value(v).data()[0];
            let record = LossRecord {
                step: self.step + 1,
                g_adv: scalar(g_adv),
                f_adv: scalar(f_adv),
                cycle_fwd: scalar(cyc_fwd),
                cycle_bwd: scalar(cyc_bwd),
                d_s: 0.0,
                d_t: 0.0,
                identity,
                total: scalar(total),
            };
            let phase = GeneratorPhase {
                record,
                fake_s: g.value(fake_s).clone(),
                fake_t: g.value(fake_t).clone(),
            };
            Ok::<_, CycleGanError>((g, phase))
        })();
        m.store.set_requires_grad("Ds.", true);
        m.store.set_requires_grad("Dt.", true);
        let (g, phase) = result?;
        g.write_param_grads(&mut m.store)?;
        Ok(phase)
    }

    /// Discriminator losses on real images and pooled fakes; returns (D_s, D_t).
    fn discriminator_phase(&mut self, real_s: &Tensor, real_t: &Tensor, fake_s: &Tensor, fake_t: &Tensor) -> Result<(f64, f64)> {
        let pooled = |pool: &mut ImagePool, fakes: &Tensor, rng: &mut ChaCha8Rng| -> Result<Tensor> {
            let items: Vec<Tensor> = unstack(fakes)?.into_iter().map(|f| pool.query(f, rng)).collect();
            stack(&items.iter().collect::<Vec<_>>())
        };
        let fake_s = pooled(&mut self.pool_s, fake_s, &mut self.rng)?;
        let fake_t = pooled(&mut self.pool_t, fake_t, &mut self.rng)?;
        let m = &self.models;
        let mut g = Graph::new();
        let d_loss = |d: &crate::nets::Discriminator, real: &Tensor, fake: Tensor, g: &mut Graph| -> Result<Var> {
            let r = g.input(real.clone())?;
            let f = g.input(fake)?;
            let sr = d.forward(g, &m.store, r)?;
            let sf = d.forward(g, &m.store, f)?;
            let lr = lsgan(g, sr, 1.0)?;
            let lf = lsgan(g, sf, 0.0)?;
            let sum = g.add(lr, lf)?;
            Ok(g.scale(sum, 0.5)?)
        };
        let ls = d_loss(&m.d_s, real_s, fake_s, &mut g)?;
        let lt = d_loss(&m.d_t, real_t, fake_t, &mut g)?;
        let total = g.add(ls, lt)?;
        g.backward(total)?;
        let out = (g.value(ls).data()[0], g.value(lt).data()[0]);
        g.write_param_grads(&mut self.models.store)?;
        Ok(out)
    }

    /// One alternating update. On divergence the state is left as it was
    /// before the call.
    pub fn train_step(&mut self, real_s: &Tensor, real_t: &Tensor) -> Result<LossRecord> {
        let (pool_s, pool_t, rng) = (self.pool_s.clone(), self.pool_t.clone(), self.rng.clone());
        match self.try_step(real_s, real_t) {
            Ok(r) => Ok(r),
            Err(e) => {
                self.models.store.zero_grad();
                self.pool_s = pool_s;
                self.pool_t = pool_t;
                self.rng = rng;
                Err(e)
            }
        }
    }

    fn try_step(&mut self, real_s: &Tensor, real_t: &Tensor) -> Result<LossRecord> {
        if real_s.shape() != real_t.shape() {
            return Err(CycleGanError::Config(format!(
                "triplex batch {:?} and singleplex batch {:?} differ in shape",
                real_s.shape(),
                real_t.shape()
            )));
        }
        let phase = self.generator_phase(real_s, real_t)?;
        let (d_s, d_t) = self.discriminator_phase(real_s, real_t, &phase.fake_s, &phase.fake_t)?;
        let record = LossRecord { d_s, d_t, ..phase.record };
        if !record.all_finite() {
            return Err(CycleGanError::Divergence(format!("non-finite loss at step {}", record.step)));
        }
        for (_, p) in self.models.store.iter() {
            if p.grad.as_ref().is_some_and(|g| !g.all_finite()) {
                return Err(CycleGanError::Divergence(format!("non-finite gradient for {}", p.name)));
            }
        }
        self.adam.step(&mut self.models.store)?;
        self.step += 1;
        self.history.push(record);
        Ok(record)
    }

    /// Run `steps` sampled updates, writing one JSON line per step to `metrics`.
    /// A divergence stops training with the state at the last finite step.
    pub fn train(&mut self, data: &TrainData, steps: usize, mut metrics: Option<&mut dyn Write>) -> Result<()> {
        for _ in 0..steps {
            let rng = self.rng.clone();
            let result = self
                .sample_batch(data)
                .and_then(|(s, t)| self.train_step(&s, &t));
            let record = match result {
                Ok(r) => r,
                Err(e) => {
                    self.rng = rng;
                    return Err(e);
                }
            };
            if let Some(w) = metrics.as_deref_mut() {
                serde_json::to_writer(&mut *w, &record)?;
                w.write_all(b"\n")?;
            }
        }
        Ok(())
    }
}

/// Train a fresh model for `config.steps` steps.
pub fn train(config: &CycleGanConfig, data: &TrainData, metrics: Option<&mut dyn Write>) -> Result<TrainState> {
    let mut state = TrainState::new(config.clone())?;
    state.train(data, config.steps, metrics)?;
    Ok(state)
}
