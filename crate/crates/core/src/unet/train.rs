use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::model::{UNetConfig, UNetParams};
use super::ops::bce_loss;
use super::tensor::{Scalar, Tensor};
use crate::dataset::SamplePair;
use crate::error::{Error, Result};
use crate::imageio::{resize, GrayImage, ResizeMode};
use crate::masking::{denoise, BinaryMask, NOISE_MIN_AREA};
use crate::morphology::Connectivity;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.epochs {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.epoch,
                r.train_loss,
                r.train_acc,
                opt(r.val_loss),
                opt(r.val_acc)
            );
        }
        s
    }
}

/// Intensities scaled to [0, 1], shape `(n, 1, h, w)`.
pub fn images_to_tensor<T: Scalar>(images: &[&GrayImage]) -> Result<Tensor<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Invalid("no images to batch".into()))?;
    let (w, h) = (first.width(), first.height());
    let mut data = Vec::with_capacity(images.len() * w * h);
    for img in images {
        if img.width() != w || img.height() != h {
            return Err(Error::Dimension(format!(
                "batch mixes {w}x{h} and {}x{} images",
                img.width(),
                img.height()
            )));
        }
        data.extend(img.data().iter().map(|&v| T::from_f64(f64::from(v) / 255.0)));
    }
    Tensor::from_vec([images.len(), 1, h, w], data)
}

pub fn masks_to_tensor<T: Scalar>(masks: &[&BinaryMask]) -> Result<Tensor<T>> {
    let first = masks
        .first()
        .ok_or_else(|| Error::Invalid("no masks to batch".into()))?;
    let (w, h) = (first.width(), first.height());
    let mut data = Vec::with_capacity(masks.len() * w * h);
    for m in masks {
        if m.width() != w || m.height() != h {
            return Err(Error::Dimension("batch mixes mask sizes".into()));
        }
        data.extend(m.data().iter().map(|&v| if v != 0 { T::ONE } else { T::ZERO }));
    }
    Tensor::from_vec([masks.len(), 1, h, w], data)
}

fn correct_pixels<T: Scalar>(probs: &Tensor<T>, target: &Tensor<T>) -> u64 {
    let half = T::from_f64(0.5);
    probs
        .data()
        .iter()
        .zip(target.data())
        .filter(|(&p, &y)| (p > half) == (y > half))
        .count() as u64
}

struct Prepared<T> {
    x: Tensor<T>,
    y: Tensor<T>,
}

fn prepare<T: Scalar>(cfg: &UNetConfig, pairs: &[SamplePair]) -> Result<Option<Prepared<T>>> {
    if pairs.is_empty() {
        return Ok(None);
    }
    for p in pairs {
        if p.image.width() != cfg.input_w
            || p.image.height() != cfg.input_h
            || p.mask.width() != cfg.input_w
            || p.mask.height() != cfg.input_h
        {
            return Err(Error::Dimension(format!(
                "pair `{}` is not at model input size {}x{}",
                p.id, cfg.input_w, cfg.input_h
            )));
        }
    }
    let imgs: Vec<&GrayImage> = pairs.iter().map(|p| &p.image).collect();
    let masks: Vec<&BinaryMask> = pairs.iter().map(|p| &p.mask).collect();
    Ok(Some(Prepared {
        x: images_to_tensor(&imgs)?,
        y: masks_to_tensor(&masks)?,
    }))
}

fn gather<T: Scalar>(src: &Tensor<T>, idx: &[usize]) -> Tensor<T> {
    let [_, c, h, w] = src.shape();
    let mut data = Vec::with_capacity(idx.len() * src.sample_len());
    for &i in idx {
        data.extend_from_slice(src.sample(i));
    }
    Tensor::from_vec([idx.len(), c, h, w], data).expect("gathered shape")
}

/// Mean loss and pixel accuracy over a whole prepared set, in `batch_size`
/// chunks.
fn evaluate<T: Scalar>(p: &UNetParams<T>, data: &Prepared<T>) -> Result<(f64, f64)> {
    let n = data.x.batch();
    let bs = p.config.batch_size;
    let mut loss_sum = 0.0;
    let mut correct = 0u64;
    let mut pixels = 0u64;
    for start in (0..n).step_by(bs) {
        let idx: Vec<usize> = (start..(start + bs).min(n)).collect();
        let (x, y) = (gather(&data.x, &idx), gather(&data.y, &idx));
        let probs = p.forward(&x)?;
        let count = y.data().len() as u64;
        loss_sum += bce_loss(&probs, &y, p.config.epsilon)? * count as f64;
        correct += correct_pixels(&probs, &y);
        pixels += count;
    }
    Ok((loss_sum / pixels as f64, correct as f64 / pixels as f64))
}

/// Mini-batch gradient descent from freshly initialised parameters.
pub fn train(config: &UNetConfig, train: &[SamplePair], val: &[SamplePair]) -> Result<(UNetParams<f32>, History)> {
    train_with(config, train, val, |_| {})
}

/// [`train`] with a callback after every epoch.
///
/// Each epoch visits the samples in an order shuffled by a generator keyed on
/// `(seed, epoch)`. Reported training loss and accuracy are the
/// pixel-weighted means over the epoch's batches, measured before each
/// batch's update; validation figures come from a full pass afterwards.
pub fn train_with(
    config: &UNetConfig,
    train: &[SamplePair],
    val: &[SamplePair],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(UNetParams<f32>, History)> {
    let mut params = UNetParams::<f32>::init(config)?;
    let train_set = prepare::<f32>(config, train)?
        .ok_or_else(|| Error::Invalid("training set is empty".into()))?;
    let val_set = prepare::<f32>(config, val)?;
    let n = train_set.x.batch();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = History::default();

    for epoch in 1..=config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut correct = 0u64;
        let mut pixels = 0u64;
        for batch in order.chunks(config.batch_size) {
            let x = gather(&train_set.x, batch);
            let y = gather(&train_set.y, batch);
            let cache = params.forward_cached(&x)?;
            let loss = bce_loss(&cache.probs, &y, config.epsilon)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            let count = y.data().len() as u64;
            loss_sum += loss * count as f64;
            correct += correct_pixels(&cache.probs, &y);
            pixels += count;
            let grads = params.backward(&cache, &y)?;
            params.sgd_step(&grads, config.learning_rate)?;
        }

        let (val_loss, val_acc) = match &val_set {
            Some(v) => {
                let (l, a) = evaluate(&params, v)?;
                if !l.is_finite() {
                    return Err(Error::Diverged { epoch });
                }
                (Some(l), Some(a))
            }
            None => (None, None),
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / pixels as f64,
            train_acc: correct as f64 / pixels as f64,
            val_loss,
            val_acc,
        };
        on_epoch(&record);
        history.epochs.push(record);
    }
    Ok((params, history))
}

/// Carbide probability map at model input size; the image is resized
/// bilinearly first when its size differs.
pub fn predict_probabilities(p: &UNetParams<f32>, img: &GrayImage) -> Result<Tensor<f32>> {
    let (w, h) = (p.config.input_w, p.config.input_h);
    let x = if img.width() == w && img.height() == h {
        images_to_tensor(&[img])?
    } else {
        images_to_tensor(&[&resize(img, w, h, ResizeMode::Bilinear)?])?
    };
    p.forward(&x)
}

/// Probabilities above 0.5 become carbide (exactly 0.5 stays iron), then the
/// small-region noise rule is applied.
pub fn probabilities_to_mask<T: Scalar>(probs: &Tensor<T>) -> Result<BinaryMask> {
    let [n, c, h, w] = probs.shape();
    if n != 1 || c != 1 {
        return Err(Error::Dimension(format!(
            "expected a single probability map, got {:?}",
            probs.shape()
        )));
    }
    let half = T::from_f64(0.5);
    let raw = BinaryMask::new(w, h, probs.data().iter().map(|&v| u8::from(v > half)).collect())?;
    Ok(denoise(&raw, NOISE_MIN_AREA, Connectivity::Eight))
}

pub fn predict_mask(p: &UNetParams<f32>, img: &GrayImage) -> Result<BinaryMask> {
    probabilities_to_mask(&predict_probabilities(p, img)?)
}

/// [`predict_mask`] over many images, optionally spread across the rayon
/// pool. Results are identical either way.
pub fn predict_masks(p: &UNetParams<f32>, images: &[&GrayImage], parallel: bool) -> Result<Vec<BinaryMask>> {
    if parallel {
        use rayon::prelude::*;
        images.par_iter().map(|img| predict_mask(p, img)).collect()
    } else {
        images.iter().map(|img| predict_mask(p, img)).collect()
    }
}
