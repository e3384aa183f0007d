use ndarray::Array3;

use super::{Night, Padding};
use crate::error::{Error, Result};
use crate::nn::Real;
use crate::stage::{LabeledEpoch, SequenceSample, StageLabel};

/// Epoch indices of the window ending at `target`, oldest first. Missing
/// predecessors repeat epoch 0 under [`Padding::RepeatFirst`]; under
/// [`Padding::Skip`] such targets yield `None`.
pub fn window_indices(target: usize, seq_len: usize, padding: Padding) -> Option<Vec<usize>> {
    if padding == Padding::Skip && target + 1 < seq_len {
        return None;
    }
    Some(
        (0..seq_len)
            .map(|j| (target + j + 1).saturating_sub(seq_len))
            .collect(),
    )
}

/// One sample per epoch of a single night (see [`window_indices`] for padding).
pub fn make_sequences(epochs: &[LabeledEpoch], seq_len: usize, padding: Padding) -> Result<Vec<SequenceSample>> {
    if seq_len == 0 {
        return Err(Error::Config("sequence length must be at least 1".into()));
    }
    if let Some(first) = epochs.first() {
        if epochs.iter().any(|e| e.subject_id != first.subject_id) {
            return Err(Error::Config("make_sequences expects epochs of a single subject".into()));
        }
    }
    Ok((0..epochs.len())
        .filter_map(|t| window_indices(t, seq_len, padding))
        .map(|w| {
            let epochs: Vec<LabeledEpoch> = w.iter().map(|&i| epochs[i].clone()).collect();
            let target_label = epochs[seq_len - 1].label;
            SequenceSample { epochs, target_label }
        })
        .collect())
}

/// Index-based view of sequence samples across many nights; epochs are
/// borrowed, and a batch is only materialized on request.
#[derive(Debug, Clone)]
pub struct WindowedSet<'a> {
    nights: Vec<&'a Night>,
    items: Vec<(usize, usize)>,
    seq_len: usize,
    padding: Padding,
    epoch_len: usize,
}

impl<'a> WindowedSet<'a> {
    pub fn new(nights: Vec<&'a Night>, seq_len: usize, padding: Padding) -> Result<Self> {
        if seq_len == 0 {
            return Err(Error::Config("sequence length must be at least 1".into()));
        }
        let epoch_len = nights
            .iter()
            .flat_map(|n| n.epochs.first())
            .map(|e| e.samples.len())
            .next()
            .unwrap_or(0);
        let mut items = Vec::new();
        for (k, n) in nights.iter().enumerate() {
            if let Some(e) = n.epochs.iter().find(|e| e.samples.len() != epoch_len) {
                return Err(Error::Shape(format!(
                    "recording {} has a {}-sample epoch, expected {epoch_len}",
                    n.recording_id,
                    e.samples.len()
                )));
            }
            for t in 0..n.epochs.len() {
                if window_indices(t, seq_len, padding).is_some() {
                    items.push((k, t));
                }
            }
        }
        Ok(Self {
            nights,
            items,
            seq_len,
            padding,
            epoch_len,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn epoch_len(&self) -> usize {
        self.epoch_len
    }

    pub fn nights(&self) -> &[&'a Night] {
        &self.nights
    }

    /// `(night index, target epoch index)` of sample `i`.
    pub fn item(&self, i: usize) -> (usize, usize) {
        self.items[i]
    }

    pub fn label(&self, i: usize) -> StageLabel {
        let (k, t) = self.items[i];
        self.nights[k].epochs[t].label
    }

    pub fn labels(&self) -> Vec<StageLabel> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }

    pub fn subjects(&self) -> Vec<String> {
        let mut s: Vec<String> = self.nights.iter().map(|n| n.subject_id.clone()).collect();
        s.sort();
        s.dedup();
        s
    }

    /// `[B, L, n]` inputs and target labels for the given sample indices.
    pub fn batch<F: Real>(&self, idx: &[usize]) -> (Array3<F>, Vec<StageLabel>) {
        let (l, n) = (self.seq_len, self.epoch_len);
        let mut data = Vec::with_capacity(idx.len() * l * n);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            let (k, t) = self.items[i];
            let night = self.nights[k];
            for e in window_indices(t, l, self.padding).expect("indexed targets have windows") {
                data.extend(night.epochs[e].samples.iter().map(|&v| F::from(v).unwrap()));
            }
            labels.push(night.epochs[t].label);
        }
        (Array3::from_shape_vec((idx.len(), l, n), data).unwrap(), labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn epochs(n: usize) -> Vec<LabeledEpoch> {
        (0..n)
            .map(|i| LabeledEpoch {
                samples: vec![i as f32; 2],
                label: StageLabel::from_index(i % 5).unwrap(),
                subject_id: "a".into(),
                position: i,
            })
            .collect()
    }

    #[test]
    fn padding_examples() {
        let e = epochs(5);
        let s1 = make_sequences(&e, 1, Padding::RepeatFirst).unwrap();
        assert_eq!(s1.len(), 5);
        assert!(s1.iter().all(|s| s.len() == 1));
        let s4 = make_sequences(&e, 4, Padding::RepeatFirst).unwrap();
        assert_eq!(s4.len(), 5);
        let pos: Vec<_> = s4[1].epochs.iter().map(|e| e.position).collect();
        assert_eq!(pos, [0, 0, 0, 1]);
        let s10 = make_sequences(&e, 10, Padding::RepeatFirst).unwrap();
        assert_eq!(s10.len(), 5);
        assert!(s10.iter().all(|s| s.len() == 10 && s.target_label == s.target().label));
        assert_eq!(make_sequences(&e, 4, Padding::Skip).unwrap().len(), 2);
        assert!(make_sequences(&[], 4, Padding::RepeatFirst).unwrap().is_empty());
    }

    #[test]
    fn batch_matches_make_sequences() {
        let night = Night {
            subject_id: "a".into(),
            recording_id: "a1".into(),
            sample_rate: 1.0,
            epochs: epochs(6),
        };
        let set = WindowedSet::new(vec![&night], 3, Padding::RepeatFirst).unwrap();
        let seqs = make_sequences(&night.epochs, 3, Padding::RepeatFirst).unwrap();
        let (x, y) = set.batch::<f32>(&[0, 2, 5]);
        for (b, &i) in [0, 2, 5].iter().enumerate() {
            assert_eq!(y[b], seqs[i].target_label);
            for j in 0..3 {
                assert_eq!(x[[b, j, 0]], seqs[i].epochs[j].samples[0]);
            }
        }
    }
}
