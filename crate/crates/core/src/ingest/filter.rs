use std::collections::HashMap;

use log::debug;

use super::interactions::Interaction;
use crate::error::{DrimError, Result};

/// Index reserved for history padding; real items start at 1.
pub const PADDING: usize = 0;

/// Bidirectional item id ↔ dense index map with event counts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vocab {
    // ids[0] is the padding placeholder
    ids: Vec<String>,
    index: HashMap<String, usize>,
    freq: Vec<u64>,
}

impl Vocab {
    /// Builds a vocabulary in order of first appearance.
    pub fn from_interactions(data: &[Interaction]) -> Self {
        let mut v = Self::from_ids(std::iter::empty::<String>());
        for it in data {
            let idx = v.insert(&it.item_id);
            v.freq[idx] += 1;
        }
        v
    }

    /// Builds a vocabulary with zero frequencies; `ids` are assigned 1, 2, ….
    pub fn from_ids<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self {
            ids: vec![String::new()],
            index: HashMap::new(),
            freq: vec![0],
        };
        for id in ids {
            v.insert(&id.into());
        }
        v
    }

    fn insert(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), i);
        self.freq.push(0);
        i
    }

    /// Number of real items (padding excluded).
    pub fn len(&self) -> usize {
        self.ids.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id_of(&self, index: usize) -> Option<&str> {
        if index == PADDING {
            return None;
        }
        self.ids.get(index).map(String::as_str)
    }

    pub fn frequency(&self, index: usize) -> u64 {
        self.freq.get(index).copied().unwrap_or(0)
    }

    pub fn set_frequencies(&mut self, freq: Vec<u64>) {
        assert_eq!(freq.len(), self.ids.len());
        self.freq = freq;
    }

    /// Item ids in index order, padding excluded.
    pub fn ids(&self) -> &[String] {
        &self.ids[1..]
    }

    /// Real item indices `1..=len`.
    pub fn indices(&self) -> std::ops::RangeInclusive<usize> {
        1..=self.len()
    }
}

/// Drops items with fewer than `min_item` events and users with fewer than
/// `min_user` events, alternating until neither rule removes anything.
pub fn filter_min_counts(
    data: Vec<Interaction>,
    min_item: u64,
    min_user: u64,
) -> Result<(Vec<Interaction>, Vocab)> {
    if min_item == 0 || min_user == 0 {
        return Err(DrimError::Config("min counts must be at least 1".into()));
    }
    let mut data = data;
    let mut round = 0;
    loop {
        round += 1;
        let before = data.len();
        let keep: Vec<bool> = {
            let counts = count_by(&data, |it| &it.item_id);
            data.iter().map(|it| counts[it.item_id.as_str()] >= min_item).collect()
        };
        let mut flags = keep.into_iter();
        data.retain(|_| flags.next().unwrap_or(false));
        let keep: Vec<bool> = {
            let counts = count_by(&data, |it| &it.user_id);
            data.iter().map(|it| counts[it.user_id.as_str()] >= min_user).collect()
        };
        let mut flags = keep.into_iter();
        data.retain(|_| flags.next().unwrap_or(false));
        debug!("filter round {round}: {before} -> {} events", data.len());
        if data.len() == before {
            break;
        }
    }
    if data.is_empty() {
        return Err(DrimError::EmptyDataset(format!(
            "no events left with min_item={min_item}, min_user={min_user}"
        )));
    }
    let vocab = Vocab::from_interactions(&data);
    Ok((data, vocab))
}

fn count_by<'a, F>(data: &'a [Interaction], key: F) -> HashMap<&'a str, u64>
where
    F: Fn(&'a Interaction) -> &'a String,
{
    let mut counts = HashMap::new();
    for it in data {
        *counts.entry(key(it).as_str()).or_insert(0) += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(u: &str, i: &str, t: u64) -> Interaction {
        Interaction::new(u, i, t)
    }

    #[test]
    fn vocab_reserves_padding() {
        let v = Vocab::from_interactions(&[ev("u", "x", 0), ev("u", "y", 1), ev("w", "x", 2)]);
        assert_eq!(v.len(), 2);
        assert_eq!(v.index_of("x"), Some(1));
        assert_eq!(v.index_of("y"), Some(2));
        assert_eq!(v.id_of(PADDING), None);
        assert_eq!(v.frequency(1), 2);
        assert_eq!(v.ids(), &["x".to_string(), "y".to_string()]);
    }

    #[test]
    fn above_thresholds_is_unchanged() {
        let data = vec![ev("a", "x", 0), ev("a", "y", 1), ev("b", "x", 2), ev("b", "y", 3)];
        let (out, vocab) = filter_min_counts(data.clone(), 2, 2).unwrap();
        assert_eq!(out, data);
        assert_eq!(vocab.len(), 2);
    }

    #[test]
    fn removal_cascades() {
        // z has one event; removing it leaves user c with a single event,
        // which then drops c and pushes w below min_item.
        let data = vec![
            ev("a", "x", 0),
            ev("a", "y", 1),
            ev("b", "x", 2),
            ev("b", "y", 3),
            ev("c", "z", 4),
            ev("c", "w", 5),
            ev("d", "w", 6),
            ev("d", "x", 7),
        ];
        let (out, vocab) = filter_min_counts(data, 2, 2).unwrap();
        assert!(out.iter().all(|e| e.user_id != "c" && e.item_id != "z"));
        // w dropped to 1 event after c left, so d falls below min_user too
        assert!(out.iter().all(|e| e.user_id != "d" && e.item_id != "w"));
        assert_eq!(vocab.len(), 2);
    }

    #[test]
    fn everything_filtered_is_an_error() {
        let err = filter_min_counts(vec![ev("a", "x", 0)], 5, 1).unwrap_err();
        assert!(matches!(err, DrimError::EmptyDataset(_)));
        assert!(matches!(
            filter_min_counts(vec![ev("a", "x", 0)], 0, 1),
            Err(DrimError::Config(_))
        ));
    }
}
