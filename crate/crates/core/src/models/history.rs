use crate::embstore::{Side, SnapshotStore};
use crate::error::Result;
use crate::nncore::HISTORY_SLOTS;

/// Dense id-indexed copy of the newest three snapshots of one side, laid
/// out as `vocab × 3 × d` so training can read a history triple without
/// map lookups. Ids outside the vocabulary read as zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryTable {
    dim: usize,
    vocab: usize,
    data: Vec<f64>,
    zeros: Vec<f64>,
    any: bool,
}

impl HistoryTable {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            vocab: 0,
            data: Vec::new(),
            zeros: vec![0.0; HISTORY_SLOTS * dim],
            any: false,
        }
    }

    /// Fills the newest `months` slots from `store`; older slots stay zero.
    pub fn from_store(store: &SnapshotStore, side: Side, vocab: usize, months: usize) -> Result<Self> {
        let snaps = store.latest_three(side)?;
        let dim = snaps[0].dim;
        let stride = HISTORY_SLOTS * dim;
        let mut data = vec![0.0; vocab * stride];
        let mut any = false;
        for (slot, snap) in snaps.iter().enumerate().take(months.min(HISTORY_SLOTS)) {
            for (&id, v) in snap.entries.range(..vocab as u64) {
                let base = id as usize * stride + slot * dim;
                for (o, &x) in data[base..base + dim].iter_mut().zip(v) {
                    *o = x as f64;
                }
                any = true;
            }
        }
        Ok(Self {
            dim,
            vocab,
            data,
            zeros: vec![0.0; stride],
            any,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major `3 × d` triple for `id`, newest month first.
    #[inline]
    pub fn get(&self, id: u32) -> &[f64] {
        let id = id as usize;
        if id < self.vocab {
            let stride = HISTORY_SLOTS * self.dim;
            &self.data[id * stride..(id + 1) * stride]
        } else {
            &self.zeros
        }
    }

    /// False when every triple is zero, letting callers skip attention.
    pub fn has_any(&self) -> bool {
        self.any
    }
}

/// User-side and item-side history for the complete model.
#[derive(Debug, Clone, PartialEq)]
pub struct Histories {
    pub user: HistoryTable,
    pub item: HistoryTable,
}

impl Histories {
    pub fn none(dim: usize) -> Self {
        Self {
            user: HistoryTable::zeros(dim),
            item: HistoryTable::zeros(dim),
        }
    }

    pub fn from_store(
        store: &SnapshotStore,
        user_vocab: usize,
        item_vocab: usize,
        months: usize,
    ) -> Result<Self> {
        Ok(Self {
            user: HistoryTable::from_store(store, Side::User, user_vocab, months)?,
            item: HistoryTable::from_store(store, Side::Item, item_vocab, months)?,
        })
    }
}
