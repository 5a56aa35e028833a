//! Mini-batch training with AdamW.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::artifact::{HeadMode, ModeKind, ModelArtifact, ARTIFACT_FORMAT_VERSION};
use super::features::{FeatureVector, Vocabulary};
use super::head::{add_adapter, forward, LinearHead, LoraAdapter};
use super::loss::{single_label_loss, two_label_loss};
use super::optim::{optimizer_step, AdamState};
use super::{ModelError, TrainConfig};
use crate::catalog::{CcMccLabel, DrgCatalog};
use crate::preprocess::{CohortSplit, StayRecord};

// Independent RNG streams derived from the configured seed.
const ADAPTER_INIT_STREAM: u64 = 0xA5A5_0001;
const DROPOUT_STREAM: u64 = 0xA5A5_0002;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

#[derive(Debug, Clone, Copy)]
enum Target {
    Single(usize),
    TwoLabel(usize, CcMccLabel),
}

/// Untrained artifact: vocabulary from the training texts, a zero head, and
/// a fresh adapter when the config asks for one.
pub fn initialize(
    train: &[StayRecord],
    catalog: &DrgCatalog,
    kind: ModeKind,
    config: &TrainConfig,
) -> Result<ModelArtifact, ModelError> {
    config.validate()?;
    if train.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    let texts: Vec<&str> = train.iter().map(|r| r.course_text.as_str()).collect();
    let vocabulary = Vocabulary::build(&texts, config.min_df)?;
    let mode = HeadMode::for_catalog(kind, catalog);
    let head = LinearHead::zeros(mode.n_outputs(), vocabulary.len());
    let adapter = match &config.adapter {
        Some(a) => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ ADAPTER_INIT_STREAM);
            Some(LoraAdapter::new(
                head.n_outputs,
                head.n_features,
                a.rank,
                a.alpha,
                &mut rng,
            )?)
        }
        None => None,
    };
    Ok(ModelArtifact {
        format_version: ARTIFACT_FORMAT_VERSION,
        mode,
        vocabulary,
        head,
        adapter,
        catalog_fingerprint: catalog.fingerprint(),
        config: config.clone(),
    })
}

fn targets(
    records: &[StayRecord],
    mode: &HeadMode,
    catalog: &DrgCatalog,
) -> Result<Vec<Target>, ModelError> {
    records
        .iter()
        .map(|r| match mode {
            HeadMode::Single { classes } => classes
                .binary_search(&r.drg_code)
                .map(Target::Single)
                .map_err(|_| ModelError::UnknownCode(r.drg_code)),
            HeadMode::TwoLabel { .. } => catalog
                .two_label_target(r.drg_code)
                .map(|(b, l)| Target::TwoLabel(b, l))
                .ok_or(ModelError::UnknownCode(r.drg_code)),
        })
        .collect()
}

fn dropout(x: &FeatureVector, p: f64, rng: &mut ChaCha8Rng) -> FeatureVector {
    if p == 0.0 {
        return x.clone();
    }
    let keep = 1.0 / (1.0 - p);
    let mut out = FeatureVector::zeros(x.dim);
    for (i, v) in x.iter() {
        if rng.gen::<f64>() >= p {
            out.indices.push(i as u32);
            out.values.push(v * keep);
        }
    }
    out
}

/// Parameter blocks being optimized. With an adapter the head is frozen.
enum Trainable {
    Head {
        w_grad: Vec<f64>,
        b_grad: Vec<f64>,
        w_state: AdamState,
        b_state: AdamState,
    },
    Adapter {
        a_grad: Vec<f64>,
        b_grad: Vec<f64>,
        a_state: AdamState,
        b_state: AdamState,
    },
}

/// Train `artifact` in place on `train`. Reuses the artifact's vocabulary,
/// so a previously trained head can serve as the frozen base for adapter
/// training.
pub fn fit(
    artifact: &mut ModelArtifact,
    train: &[StayRecord],
    catalog: &DrgCatalog,
    config: &TrainConfig,
) -> Result<TrainLog, ModelError> {
    config.validate()?;
    if train.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    artifact.check_catalog(catalog)?;
    if artifact.mode != HeadMode::for_catalog(artifact.kind(), catalog) {
        return Err(ModelError::InvalidConfig(
            "artifact head does not match the catalog layout".into(),
        ));
    }
    if let Some(a) = &config.adapter {
        if artifact.adapter.is_none() {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ ADAPTER_INIT_STREAM);
            artifact.adapter = Some(LoraAdapter::new(
                artifact.head.n_outputs,
                artifact.head.n_features,
                a.rank,
                a.alpha,
                &mut rng,
            )?);
        }
    }
    if config.adapter.is_none() && artifact.adapter.is_some() {
        return Err(ModelError::InvalidConfig(
            "artifact carries an adapter; training it needs adapter settings".into(),
        ));
    }
    artifact.config = config.clone();

    let features: Vec<FeatureVector> = train
        .iter()
        .map(|r| artifact.vocabulary.featurize(&r.course_text))
        .collect();
    let targets = targets(train, &artifact.mode, catalog)?;
    let (c, v) = (artifact.head.n_outputs, artifact.head.n_features);
    let adam = config.adam();
    let dropout_p = config.adapter.map_or(0.0, |a| a.dropout);

    let mut trainable = match (&config.adapter, &artifact.adapter) {
        (Some(_), Some(a)) => Trainable::Adapter {
            a_grad: vec![0.0; a.a.len()],
            b_grad: vec![0.0; a.b.len()],
            a_state: AdamState::new(a.a.len()),
            b_state: AdamState::new(a.b.len()),
        },
        _ => Trainable::Head {
            w_grad: vec![0.0; c * v],
            b_grad: vec![0.0; c],
            w_state: AdamState::new(c * v),
            b_state: AdamState::new(c),
        },
    };

    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed ^ DROPOUT_STREAM);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let mut total_loss = 0.0;
        let mut steps = 0;
        for batch in order.chunks(config.batch_size) {
            let inv = 1.0 / batch.len() as f64;
            match &mut trainable {
                Trainable::Head { w_grad, b_grad, .. } => {
                    w_grad.iter_mut().for_each(|g| *g = 0.0);
                    b_grad.iter_mut().for_each(|g| *g = 0.0);
                }
                Trainable::Adapter { a_grad, b_grad, .. } => {
                    a_grad.iter_mut().for_each(|g| *g = 0.0);
                    b_grad.iter_mut().for_each(|g| *g = 0.0);
                }
            }
            let mut batch_loss = 0.0;
            for &i in batch {
                let x = &features[i];
                let (loss, grad) = match &mut trainable {
                    Trainable::Head { w_grad, b_grad, .. } => {
                        let logits = forward(x, &artifact.head, None)?;
                        let (loss, grad) = loss_and_grad(&logits, targets[i], config.lambda_cc);
                        for (row, &g) in grad.iter().enumerate() {
                            let g = g * inv;
                            b_grad[row] += g;
                            let w_row = &mut w_grad[row * v..(row + 1) * v];
                            for (j, xv) in x.iter() {
                                w_row[j] += g * xv;
                            }
                        }
                        (loss, grad)
                    }
                    Trainable::Adapter { a_grad, b_grad, .. } => {
                        let adapter = artifact.adapter.as_ref().expect("adapter present");
                        let xd = dropout(x, dropout_p, &mut dropout_rng);
                        let mut logits = forward(x, &artifact.head, None)?;
                        let ax = adapter.project(&xd);
                        add_adapter(&mut logits, &ax, adapter);
                        let (loss, grad) = loss_and_grad(&logits, targets[i], config.lambda_cc);
                        let scale = adapter.scale();
                        let r = adapter.rank;
                        // dL/dB[c, k] = scale * g[c] * (A x)[k]
                        // dL/dA[k, j] = scale * (B^T g)[k] * x[j]
                        let mut bt_g = vec![0.0; r];
                        for (row, &g) in grad.iter().enumerate() {
                            let g = g * inv;
                            for k in 0..r {
                                b_grad[row * r + k] += scale * g * ax[k];
                                bt_g[k] += scale * adapter.b[row * r + k] * g;
                            }
                        }
                        for (k, &s) in bt_g.iter().enumerate() {
                            let a_row = &mut a_grad[k * v..(k + 1) * v];
                            for (j, xv) in xd.iter() {
                                a_row[j] += s * xv;
                            }
                        }
                        (loss, grad)
                    }
                };
                debug_assert_eq!(grad.len(), c);
                batch_loss += loss;
            }
            match &mut trainable {
                Trainable::Head {
                    w_grad,
                    b_grad,
                    w_state,
                    b_state,
                } => {
                    optimizer_step(&mut artifact.head.weights, w_grad, w_state, &adam)?;
                    optimizer_step(&mut artifact.head.bias, b_grad, b_state, &adam)?;
                }
                Trainable::Adapter {
                    a_grad,
                    b_grad,
                    a_state,
                    b_state,
                } => {
                    let adapter = artifact.adapter.as_mut().expect("adapter present");
                    optimizer_step(&mut adapter.a, a_grad, a_state, &adam)?;
                    optimizer_step(&mut adapter.b, b_grad, b_state, &adam)?;
                }
            }
            total_loss += batch_loss * inv;
            steps += 1;
        }
        log.epochs.push(EpochLog {
            epoch,
            steps,
            mean_loss: if steps > 0 {
                total_loss / steps as f64
            } else {
                0.0
            },
        });
    }
    Ok(log)
}

fn loss_and_grad(logits: &[f64], target: Target, lambda_cc: f64) -> (f64, Vec<f64>) {
    match target {
        Target::Single(y) => single_label_loss(logits, y),
        Target::TwoLabel(base, cc) => two_label_loss(logits, base, cc, lambda_cc),
    }
}

/// Initialize and fit on the training side of `split`.
pub fn train(
    split: &CohortSplit,
    catalog: &DrgCatalog,
    kind: ModeKind,
    config: &TrainConfig,
) -> Result<(ModelArtifact, TrainLog), ModelError> {
    let mut artifact = initialize(&split.train, catalog, kind, config)?;
    let log = fit(&mut artifact, &split.train, catalog, config)?;
    Ok((artifact, log))
}
