use std::path::Path;

use vti_tensor::{ParamStore, Tensor};

use super::checkpoint::{f32s_to_u64, load_tensors, save_tensors, u64_to_f32s, NamedTensors};
use super::{EpochStats, Moments};
use crate::config::Config;
use crate::error::{CoreError, Result};
use crate::model::VtiModel;

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: VtiModel<f32>,
    pub moments: Moments<f32>,
    pub step: u64,
    pub epoch: usize,
    pub best_val: f64,
    pub bad_epochs: usize,
    pub best_params: ParamStore<f32>,
    pub history: Vec<EpochStats>,
}

impl TrainState {
    pub fn new(model: VtiModel<f32>) -> Self {
        Self {
            moments: Moments::zeros(&model.params),
            best_params: model.params.clone(),
            model,
            step: 0,
            epoch: 0,
            best_val: f64::INFINITY,
            bad_epochs: 0,
            history: Vec::new(),
        }
    }

    /// The parameters with the lowest validation loss seen so far.
    pub fn best_model(&self) -> VtiModel<f32> {
        VtiModel {
            net: self.model.net.clone(),
            params: self.best_params.clone(),
        }
    }
}

/// A run configuration, its vocabulary size and the training state.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: Config,
    pub vocab: usize,
    pub state: TrainState,
}

fn f64_pieces(values: impl IntoIterator<Item = f64>) -> Vec<f32> {
    values.into_iter().flat_map(|x| u64_to_f32s(x.to_bits())).collect()
}

fn push_store(out: &mut NamedTensors, prefix: &str, store: &ParamStore<f32>) {
    for (_, name, t) in store.iter() {
        out.push((format!("{prefix}{name}"), t.clone()));
    }
}

fn push_buffers(out: &mut NamedTensors, prefix: &str, store: &ParamStore<f32>, bufs: &[Vec<f32>]) -> Result<()> {
    for (id, name, t) in store.iter() {
        let b = Tensor::new(t.shape().to_vec(), bufs[id.index()].clone())?;
        out.push((format!("{prefix}{name}"), b));
    }
    Ok(())
}

fn mismatch(detail: String) -> CoreError {
    CoreError::Mismatch(detail)
}

/// Copies every `prefix`-tensor into the parameter of the same name. Missing,
/// unknown or wrongly shaped tensors are errors.
pub(crate) fn load_prefixed(tensors: &NamedTensors, prefix: &str, store: &mut ParamStore<f32>) -> Result<()> {
    let mut seen = vec![false; store.len()];
    for (name, t) in tensors {
        let Some(rest) = name.strip_prefix(prefix) else {
            continue;
        };
        let id = store
            .id(rest)
            .ok_or_else(|| mismatch(format!("unknown tensor {name:?} for this model")))?;
        if store.get(id).shape() != t.shape() {
            return Err(mismatch(format!(
                "tensor {name:?} has shape {:?}, model expects {:?}",
                t.shape(),
                store.get(id).shape()
            )));
        }
        *store.get_mut(id) = t.clone();
        seen[id.index()] = true;
    }
    if let Some(id) = store.ids().find(|id| !seen[id.index()]) {
        return Err(mismatch(format!("missing tensor {prefix}{}", store.name(id))));
    }
    Ok(())
}

fn find<'a>(tensors: &'a NamedTensors, name: &str) -> Result<&'a Tensor<f32>> {
    tensors
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, t)| t)
        .ok_or_else(|| mismatch(format!("missing tensor {name}")))
}

impl Checkpoint {
    pub fn to_tensors(&self) -> Result<NamedTensors> {
        let s = &self.state;
        let mut out = NamedTensors::new();
        let text = self.config.render();
        out.push((
            "meta.config".into(),
            Tensor::new(vec![text.len()], text.bytes().map(f32::from).collect())?,
        ));
        let counters = [s.epoch as u64, s.step, s.bad_epochs as u64, self.vocab as u64];
        out.push((
            "meta.counters".into(),
            Tensor::new(vec![4, 4], counters.into_iter().flat_map(u64_to_f32s).collect())?,
        ));
        out.push(("meta.best_val".into(), Tensor::new(vec![4], f64_pieces([s.best_val]))?));
        if !s.history.is_empty() {
            let flat = f64_pieces(s.history.iter().flat_map(|h| h.to_array()));
            out.push((
                "meta.history".into(),
                Tensor::new(vec![s.history.len(), EpochStats::FIELDS.len(), 4], flat)?,
            ));
        }
        push_store(&mut out, "param.", &s.model.params);
        push_store(&mut out, "best.", &s.best_params);
        push_buffers(&mut out, "adam.m.", &s.model.params, &s.moments.m)?;
        push_buffers(&mut out, "adam.v.", &s.model.params, &s.moments.v)?;
        Ok(out)
    }

    pub fn from_tensors(tensors: &NamedTensors) -> Result<Self> {
        let text_t = find(tensors, "meta.config")?;
        let text: Vec<u8> = text_t.data().iter().map(|&b| b as u8).collect();
        let text = String::from_utf8(text).map_err(|_| mismatch("config text is not UTF-8".into()))?;
        let config = Config::parse(&text)?;
        let counters = find(tensors, "meta.counters")?;
        if counters.len() != 16 {
            return Err(mismatch("meta.counters must hold 16 values".into()));
        }
        let c: Vec<u64> = counters.data().chunks(4).map(f32s_to_u64).collect();
        let vocab = c[3] as usize;
        let best_val = f64::from_bits(f32s_to_u64(find(tensors, "meta.best_val")?.data()));
        let history = match tensors.iter().find(|(n, _)| n == "meta.history") {
            Some((_, t)) => {
                let vals: Vec<f64> = t.data().chunks(4).map(|p| f64::from_bits(f32s_to_u64(p))).collect();
                vals.chunks(EpochStats::FIELDS.len())
                    .map(EpochStats::from_array)
                    .collect()
            }
            None => Vec::new(),
        };

        let mut model = VtiModel::<f32>::new(&config.model_config(vocab)?, config.train_seed)?;
        load_prefixed(tensors, "param.", &mut model.params)?;
        let mut best_params = model.params.clone();
        load_prefixed(tensors, "best.", &mut best_params)?;
        let mut m = model.params.clone();
        load_prefixed(tensors, "adam.m.", &mut m)?;
        let mut v = model.params.clone();
        load_prefixed(tensors, "adam.v.", &mut v)?;
        let buffers = |s: &ParamStore<f32>| s.iter().map(|(_, _, t)| t.data().to_vec()).collect();
        let moments = Moments {
            m: buffers(&m),
            v: buffers(&v),
        };
        Ok(Self {
            config,
            vocab,
            state: TrainState {
                model,
                moments,
                step: c[1],
                epoch: c[0] as usize,
                best_val,
                bad_epochs: c[2] as usize,
                best_params,
                history,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_tensors(path, &self.to_tensors()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tensors(&load_tensors(path)?)
    }
}
