//! Tri-training: three seed-diversified models label unlabeled clips for
//! each other by per-class consensus, and the final system averages the
//! supervised and tri-trained models.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::corpus::{save_manifest, ClipRecord, Split};
use crate::densenet::DenseNet;
use crate::error::{Error, Result};
use crate::features::Spectrogram;
use crate::labels::{ClassId, ClassVocab, WeakLabelSet};
use crate::pipeline::{infer, infer_probs, Clip, ClipInference};
use crate::rng::{derive_seed, STREAM_TRITRAIN};
use crate::train::{examples, train_model, Example, TrainOutcome};

const INFER_BATCH: usize = 32;

/// Anything that produces clip-level class probabilities.
pub trait Tagger {
    fn n_classes(&self) -> usize;
    fn tag_probs(&self, specs: &[&Spectrogram]) -> Result<Vec<Vec<f32>>>;
}

impl Tagger for DenseNet {
    fn n_classes(&self) -> usize {
        self.spec.n_classes
    }

    fn tag_probs(&self, specs: &[&Spectrogram]) -> Result<Vec<Vec<f32>>> {
        infer_probs(self, specs, INFER_BATCH)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub id: String,
    pub labels: WeakLabelSet,
    /// Probabilities of each emitted class from the two contributing models.
    pub confidences: BTreeMap<ClassId, (f32, f32)>,
    pub round: usize,
    pub models: (usize, usize),
}

/// Per-class agreement: class `c` is kept when both models give it at
/// least `tau`; a clip is emitted only if some class is kept.
pub fn consensus_from_probs(
    ids: &[String],
    probs_j: &[Vec<f32>],
    probs_k: &[Vec<f32>],
    tau: f32,
    round: usize,
    models: (usize, usize),
) -> Vec<PseudoLabel> {
    let mut out = Vec::new();
    for ((id, pj), pk) in ids.iter().zip(probs_j).zip(probs_k) {
        let confidences: BTreeMap<ClassId, (f32, f32)> = pj
            .iter()
            .zip(pk)
            .enumerate()
            .filter(|(_, (&a, &b))| a >= tau && b >= tau)
            .map(|(c, (&a, &b))| (c, (a, b)))
            .collect();
        if !confidences.is_empty() {
            out.push(PseudoLabel {
                id: id.clone(),
                labels: confidences.keys().copied().collect(),
                confidences,
                round,
                models,
            });
        }
    }
    out
}

/// Runs utterance-level inference with both models and applies
/// [`consensus_from_probs`].
pub fn consensus_labels<T: Tagger + ?Sized>(
    model_j: &T,
    model_k: &T,
    unlabeled: &[(&str, &Spectrogram)],
    tau: f32,
) -> Result<Vec<PseudoLabel>> {
    let ids: Vec<String> = unlabeled.iter().map(|(id, _)| id.to_string()).collect();
    let specs: Vec<&Spectrogram> = unlabeled.iter().map(|(_, s)| *s).collect();
    let pj = model_j.tag_probs(&specs)?;
    let pk = model_k.tag_probs(&specs)?;
    Ok(consensus_from_probs(&ids, &pj, &pk, tau, 0, (0, 1)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriState {
    pub tau: f32,
    pub rounds_done: usize,
    /// Round-0 models trained on labeled data only.
    pub supervised: Vec<DenseNet>,
    /// Models after the latest round.
    pub current: Vec<DenseNet>,
    /// Pseudo-labelled clips per model, keyed by clip id.
    pub pools: Vec<BTreeMap<String, PseudoLabel>>,
    pub outcomes: Vec<Vec<TrainOutcome>>,
}

impl TriState {
    /// Supervised models followed by tri-trained ones; just the three
    /// supervised models when no pseudo-label round ran.
    pub fn ensemble(&self) -> Vec<&DenseNet> {
        if self.rounds_done <= 1 {
            self.supervised.iter().collect()
        } else {
            self.supervised.iter().chain(&self.current).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriConfig {
    pub seeds: [u64; 3],
    /// Total rounds including the supervised round 0.
    pub rounds: usize,
    pub tau: f32,
    /// Retrain from the round-0 weights rather than a fresh init.
    pub warm_start: bool,
}

impl TriConfig {
    pub fn from_run(cfg: &RunConfig) -> Self {
        TriConfig {
            seeds: [0, 1, 2].map(|i| derive_seed(cfg.seed, STREAM_TRITRAIN, i)),
            rounds: cfg.rounds,
            tau: cfg.tau,
            warm_start: cfg.warm_start,
        }
    }
}

fn train_three(
    inits: Vec<DenseNet>,
    cfg: &RunConfig,
    shuffle_seeds: [u64; 3],
    sets: &[Vec<Example<'_>>],
    dev: Option<&[Example<'_>]>,
) -> Result<Vec<TrainOutcome>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = inits
            .into_iter()
            .zip(sets)
            .zip(shuffle_seeds)
            .map(|((model, set), seed)| s.spawn(move || train_model(model, cfg, seed, set, dev)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    })
}

/// Writes one manifest per model for the pools after `round`.
fn persist_pools(
    dir: &Path,
    round: usize,
    pools: &[BTreeMap<String, PseudoLabel>],
    unlabeled: &[Clip],
    vocab: &ClassVocab,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Invalid(format!("{}: {e}", dir.display())))?;
    let by_id: BTreeMap<&str, &Clip> = unlabeled
        .iter()
        .map(|c| (c.record.id.as_str(), c))
        .collect();
    for (i, pool) in pools.iter().enumerate() {
        let records: Vec<ClipRecord> = pool
            .values()
            .map(|p| ClipRecord {
                id: p.id.clone(),
                path: by_id[p.id.as_str()].record.path.clone(),
                weak: p.labels.clone(),
                strong: None,
                split: Split::Unlabeled,
                derived_from: None,
            })
            .collect();
        save_manifest(
            &dir.join(format!("round{round}_model{i}.jsonl")),
            &records,
            vocab,
        )?;
    }
    Ok(())
}

/// Round 0 trains three models on `labeled`; every later round gives model
/// `i` the consensus of the other two on `unlabeled` and retrains it on
/// `labeled` plus its pool. Labels of `unlabeled` clips are never read.
pub fn tri_train(
    labeled: &[Clip],
    unlabeled: &[Clip],
    dev: Option<&[Clip]>,
    run: &RunConfig,
    tri: &TriConfig,
    vocab: &ClassVocab,
    pool_dir: Option<&Path>,
) -> Result<TriState> {
    if labeled.is_empty() {
        return Err(Error::Invalid("tri-training needs labeled clips".into()));
    }
    if tri.rounds == 0 {
        return Err(Error::Invalid("rounds must be at least 1".into()));
    }
    let spec = run.arch_spec(vocab.len());
    let fresh = |i: usize| DenseNet::build(spec.clone(), tri.seeds[i]);
    let shuffle =
        |round: usize| [0, 1, 2].map(|i| derive_seed(tri.seeds[i], STREAM_TRITRAIN, round as u64));
    let dev_ex = dev.map(examples);
    let labeled_ex = examples(labeled);

    let inits = (0..3)
        .map(fresh)
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let sets = vec![labeled_ex.clone(), labeled_ex.clone(), labeled_ex.clone()];
    let round0 = train_three(inits, run, shuffle(0), &sets, dev_ex.as_deref())?;
    let supervised: Vec<DenseNet> = round0.iter().map(|o| o.model.clone()).collect();
    let mut state = TriState {
        tau: tri.tau,
        rounds_done: 1,
        current: supervised.clone(),
        supervised,
        pools: vec![BTreeMap::new(); 3],
        outcomes: vec![round0],
    };

    let ids: Vec<String> = unlabeled.iter().map(|c| c.record.id.clone()).collect();
    let specs: Vec<&Spectrogram> = unlabeled.iter().map(|c| &c.spec).collect();
    let index: BTreeMap<&str, usize> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    for round in 1..tri.rounds {
        let probs: Vec<Vec<Vec<f32>>> = state
            .current
            .iter()
            .map(|m| m.tag_probs(&specs))
            .collect::<Result<_>>()?;
        for i in 0..3 {
            let (j, k) = ((i + 1) % 3, (i + 2) % 3);
            let (j, k) = (j.min(k), j.max(k));
            for p in consensus_from_probs(&ids, &probs[j], &probs[k], tri.tau, round, (j, k)) {
                state.pools[i].insert(p.id.clone(), p);
            }
            log::info!(
                "round {round}: model {i} pool holds {} clips",
                state.pools[i].len()
            );
        }
        if let Some(dir) = pool_dir {
            persist_pools(dir, round, &state.pools, unlabeled, vocab)?;
        }
        let sets: Vec<Vec<Example>> = state
            .pools
            .iter()
            .map(|pool| {
                let mut set = labeled_ex.clone();
                set.extend(pool.values().map(|p| Example {
                    spec: specs[index[p.id.as_str()]],
                    labels: &p.labels,
                }));
                set
            })
            .collect();
        let inits = (0..3)
            .map(|i| {
                if tri.warm_start {
                    Ok(state.supervised[i].clone())
                } else {
                    fresh(i)
                }
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let outcomes = train_three(inits, run, shuffle(round), &sets, dev_ex.as_deref())?;
        state.current = outcomes.iter().map(|o| o.model.clone()).collect();
        state.outcomes.push(outcomes);
        state.rounds_done += 1;
    }
    Ok(state)
}

/// Averages probabilities and CAM sequences over models that share a class
/// vocabulary and output time resolution.
pub fn ensemble_predict(
    members: &[(&DenseNet, &ClassVocab)],
    specs: &[&Spectrogram],
    batch_size: usize,
) -> Result<Vec<ClipInference>> {
    let (first, vocab) = members
        .first()
        .ok_or_else(|| Error::Invalid("ensemble needs at least one model".into()))?;
    for (m, v) in &members[1..] {
        if v != vocab {
            return Err(Error::Invalid(format!(
                "ensemble vocabulary mismatch: {:?} vs {:?}",
                v.names(),
                vocab.names()
            )));
        }
        if m.spec.downsample_factor() != first.spec.downsample_factor() {
            return Err(Error::Invalid(
                "ensemble members have different output time resolutions".into(),
            ));
        }
    }
    let mut sum: Option<Vec<ClipInference>> = None;
    for (m, _) in members {
        let out = infer(m, specs, batch_size)?;
        sum = Some(match sum {
            None => out,
            Some(mut acc) => {
                for (a, o) in acc.iter_mut().zip(out) {
                    a.probs.iter_mut().zip(&o.probs).for_each(|(x, y)| *x += y);
                    for (sa, so) in a.sequences.iter_mut().zip(&o.sequences) {
                        sa.iter_mut().zip(so).for_each(|(x, y)| *x += y);
                    }
                }
                acc
            }
        });
    }
    let n = members.len() as f32;
    let mut acc = sum.expect("non-empty");
    for a in &mut acc {
        a.probs.iter_mut().for_each(|x| *x /= n);
        a.sequences.iter_mut().flatten().for_each(|x| *x /= n);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densenet::ArchSpec;

    struct Fixed(Vec<Vec<f32>>);

    impl Tagger for Fixed {
        fn n_classes(&self) -> usize {
            self.0[0].len()
        }
        fn tag_probs(&self, specs: &[&Spectrogram]) -> Result<Vec<Vec<f32>>> {
            Ok(self.0[..specs.len()].to_vec())
        }
    }

    fn spec(v: f32) -> Spectrogram {
        Spectrogram {
            frames: (0..40 * 16).map(|i| v + (i % 5) as f32 * 0.3).collect(),
            n_frames: 40,
            n_mels: 16,
            frame_shift_s: 0.01,
        }
    }

    #[test]
    fn consensus_rule() {
        let s = spec(0.0);
        let clips = [("a", &s), ("b", &s)];
        let b = Fixed(vec![vec![0.95, 0.1], vec![0.95, 0.2]]);
        let c = Fixed(vec![vec![0.92, 0.1], vec![0.40, 0.2]]);
        let out = consensus_labels(&b, &c, &clips, 0.9).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].id, "a");
        assert_eq!(out[0].labels, [0].into());
        assert_eq!(out[0].confidences[&0], (0.95, 0.92));
        assert!(consensus_labels(&b, &c, &clips, 1.0).unwrap().is_empty());
    }

    fn tiny(seed: u64, n_classes: usize) -> DenseNet {
        let spec = ArchSpec {
            n_mels: 16,
            ..ArchSpec::densenet63(n_classes).scaled(2, vec![1, 1, 1, 1])
        };
        DenseNet::build(spec, seed).unwrap()
    }

    #[test]
    fn ensemble_of_identical_models_is_identity() {
        let m = tiny(1, 3);
        let v = ClassVocab::new(vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let s = [spec(0.5), spec(-1.0)];
        let refs: Vec<&Spectrogram> = s.iter().collect();
        let single = infer(&m, &refs, 4).unwrap();
        let ens = ensemble_predict(&[(&m, &v), (&m, &v)], &refs, 4).unwrap();
        for (a, b) in single.iter().zip(&ens) {
            for (x, y) in a.probs.iter().zip(&b.probs) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn ensemble_averages_directly() {
        let (m1, m2) = (tiny(1, 3), tiny(2, 3));
        let v = ClassVocab::new(vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let s = [spec(0.5)];
        let refs: Vec<&Spectrogram> = s.iter().collect();
        let (a, b) = (infer(&m1, &refs, 1).unwrap(), infer(&m2, &refs, 1).unwrap());
        let e = ensemble_predict(&[(&m1, &v), (&m2, &v)], &refs, 1).unwrap();
        for c in 0..3 {
            let want = (a[0].probs[c] + b[0].probs[c]) / 2.0;
            assert!((e[0].probs[c] - want).abs() < 1e-6);
            for t in 0..a[0].sequences[c].len() {
                let want = (a[0].sequences[c][t] + b[0].sequences[c][t]) / 2.0;
                assert!((e[0].sequences[c][t] - want).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn ensemble_vocab_mismatch() {
        let m = tiny(1, 3);
        let v1 = ClassVocab::new(vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let v2 = ClassVocab::new(vec!["a".into(), "b".into(), "d".into()]).unwrap();
        let s = [spec(0.0)];
        let refs: Vec<&Spectrogram> = s.iter().collect();
        assert!(ensemble_predict(&[(&m, &v1), (&m, &v2)], &refs, 1).is_err());
        assert!(ensemble_predict(&[], &refs, 1).is_err());
    }
}
